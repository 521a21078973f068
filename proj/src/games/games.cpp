#include "ctd/games/games.hpp"

#include <map>

namespace ctd::games {

using channels::Protocol;
using worlds::GameSample;
using worlds::Object;

std::string to_string(GameKind g) {
  switch (g) {
    case GameKind::Ref: return "ref";
    case GameKind::Recon: return "recon";
    case GameKind::Diff: return "diff";
    case GameKind::Mref: return "mref";
  }
  return "?";
}

GameKind game_from_string(const std::string& s) {
  if (s == "ref") return GameKind::Ref;
  if (s == "recon") return GameKind::Recon;
  if (s == "diff") return GameKind::Diff;
  if (s == "mref") return GameKind::Mref;
  throw GameError("unknown game '" + s + "'");
}

GameConfig game_config(GameKind kind) {
  switch (kind) {
    case GameKind::Ref: return {kind, {1, 0, 1, 20}, LossKind::CE};
    case GameKind::Recon: return {kind, {1, 0, 1, 20}, LossKind::MSE};
    case GameKind::Diff: return {kind, {20, 20, 20, 20}, LossKind::BCE};
    case GameKind::Mref: return {kind, {20, 0, 1, 20}, LossKind::CE};
  }
  throw GameError("unknown game kind");
}

Matrix sender_aggregate(const Matrix& u) {
  if (u.rows() == 0) throw GameError("sender_aggregate: no targets");
  return u.colwise().mean();
}

Matrix diff_sender_aggregate(const Matrix& targets, const Matrix& distractors) {
  if (targets.rows() == 0 || distractors.rows() == 0) throw GameError("diff_sender_aggregate: empty set");
  if (targets.cols() != distractors.cols()) throw DimensionError("diff_sender_aggregate: widths differ");
  Matrix out(1, 2 * targets.cols());
  out << targets.colwise().mean(), distractors.colwise().mean();
  return out;
}

Eigen::RowVectorXd receiver_score(const Eigen::RowVectorXd& z, const Matrix& candidates) {
  if (z.size() != candidates.cols()) throw DimensionError("receiver_score: latent and candidate widths differ");
  return (candidates * z.transpose()).transpose();
}

Agents make_agents(const AgentConfig& cfg, const Rng& rng) {
  cfg.channel.validate();
  const GameConfig& g = cfg.game;
  if (g.kind == GameKind::Diff && g.geometry.sender_distractors == 0)
    throw GameError("diff game needs sender distractors");
  Agents a;
  a.config = cfg;
  const auto& ch = cfg.channel;
  const int in = worlds::input_dim(cfg.world);
  Rng r0 = rng.split(0), r1 = rng.split(1), r2 = rng.split(2), r3 = rng.split(3), r4 = rng.split(4),
      r5 = rng.split(5), r6 = rng.split(6);
  a.sender_encoder = Mlp(a.sender, "sender.enc", {in, cfg.encoder_hidden, ch.latent_dim}, r0);
  const int agg = g.kind == GameKind::Diff ? 2 * ch.latent_dim : ch.latent_dim;
  const int chan_in = ch.protocol == Protocol::CB ? ch.word_dim : ch.latent_dim;
  a.sender_proj = Dense(a.sender, "sender.proj", agg, chan_in, r1);
  switch (ch.protocol) {
    case Protocol::CB:
      a.codebook.add(Agents::kWords, init_uniform(ch.vocab, ch.word_dim, ch.word_dim, r6));
      a.usage = Eigen::VectorXd::Zero(ch.vocab);
      a.cb_rx = channels::CbReceiver(a.receiver, ch, r4);
      break;
    case Protocol::GS:
      a.gs = channels::GsSender(a.sender, ch, r2);
      a.seq_rx = channels::SeqReceiver(a.receiver, ch, r4);
      break;
    case Protocol::QT:
      a.qt = channels::QtSender(a.sender, ch, r2);
      a.seq_rx = channels::SeqReceiver(a.receiver, ch, r4);
      break;
  }
  if (g.kind == GameKind::Recon)
    a.recon_head = Dense(a.receiver, "recon", ch.latent_dim, in, r5);
  else
    a.receiver_encoder = Mlp(a.receiver, "receiver.enc", {in, cfg.encoder_hidden, ch.latent_dim}, r3);
  return a;
}

namespace {

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Distinct objects across the batch plus a B x U matrix whose row b averages
// the rows of sample b's objects; duplicates are encoded once.
struct Pooled {
  std::vector<Object> objects;
  SparseRows mean;
};

Pooled pool_objects(std::span<const GameSample> batch, const std::vector<Object> GameSample::*field) {
  Pooled p;
  std::map<int, int> row_of;
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& objs = batch[b].*field;
    if (objs.empty()) throw GameError("sender_aggregate: sample has an empty object set");
    std::map<int, int> counts;
    for (const auto& o : objs) ++counts[worlds::object_code(o)];
    for (const auto& [code, n] : counts) {
      auto [it, fresh] = row_of.emplace(code, static_cast<int>(p.objects.size()));
      if (fresh) p.objects.push_back(worlds::object_from_code(code));
      trips.emplace_back(static_cast<int>(b), it->second, static_cast<double>(n) / static_cast<double>(objs.size()));
    }
  }
  p.mean.resize(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(p.objects.size()));
  p.mean.setFromTriplets(trips.begin(), trips.end());
  return p;
}

Var encode_pooled(Tape& tape, Agents& a, const Pooled& p) {
  const auto& cfg = a.config;
  auto x = tape.constant(worlds::encode_batch(cfg.world, cfg.world_seed, p.objects));
  return left_multiply(p.mean, a.sender_encoder(tape, a.sender, x));
}

void check_sample(const GameConfig& g, const GameSample& s) {
  const auto& geo = g.geometry;
  if (static_cast<int>(s.sender_targets.size()) != geo.sender_targets ||
      static_cast<int>(s.sender_distractors.size()) != geo.sender_distractors ||
      static_cast<int>(s.receiver_targets.size()) != geo.receiver_targets ||
      static_cast<int>(s.receiver_distractors.size()) != geo.receiver_distractors ||
      static_cast<int>(s.order.size()) != geo.candidates())
    throw GameError("play_episode: sample does not match the game geometry");
}

}  // namespace

double episode_correct(GameKind kind, const Eigen::RowVectorXd& scores, const GameSample& s) {
  if (kind == GameKind::Diff) {
    const auto labels = s.labels();
    double ok = 0;
    for (Eigen::Index k = 0; k < scores.size(); ++k) ok += ((scores(k) > 0.0) == (labels[static_cast<std::size_t>(k)] == 1));
    return ok / static_cast<double>(scores.size());
  }
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < scores.size(); ++k)
    if (scores(k) > scores(best)) best = k;
  return best == s.gold() ? 1.0 : 0.0;
}

double evaluate_accuracy(const std::vector<double>& correct) {
  if (correct.empty()) throw GameError("evaluate_accuracy: no episodes");
  double sum = 0;
  for (double c : correct) sum += c;
  return sum / static_cast<double>(correct.size());
}

EpisodeOutput play_batch(Tape& tape, Agents& a, std::span<const GameSample> batch, bool train, Rng& rng) {
  if (batch.empty()) throw GameError("play_batch: empty batch");
  const auto& cfg = a.config;
  const auto& ch = cfg.channel;
  for (const auto& s : batch) check_sample(cfg.game, s);
  const auto B = static_cast<Eigen::Index>(batch.size());
  EpisodeOutput out;

  const Pooled targets = pool_objects(batch, &GameSample::sender_targets);
  Var agg = encode_pooled(tape, a, targets);
  if (cfg.game.kind == GameKind::Diff)
    agg = concat_cols(agg, encode_pooled(tape, a, pool_objects(batch, &GameSample::sender_distractors)));
  Var z = a.sender_proj(tape, a.sender, agg);
  out.latents = z.value();

  Var zr;
  switch (ch.protocol) {
    case Protocol::CB: {
      auto q = channels::cb_quantize(z, tape.param(a.codebook, Agents::kWords), ch.length, ch.cb.beta2);
      out.commitment = q.commitment;
      out.messages = std::move(q.ids);
      zr = a.cb_rx.decode(tape, a.receiver, q.message);
      break;
    }
    case Protocol::GS: {
      auto m = a.gs.encode(tape, a.sender, z, ch.length, train, rng);
      out.messages = std::move(m.ids);
      zr = a.seq_rx.decode(tape, a.receiver, m.words);
      break;
    }
    case Protocol::QT: {
      auto m = a.qt.encode(tape, a.sender, z, ch.length);
      out.messages = std::move(m.ids);
      zr = a.seq_rx.decode(tape, a.receiver, m.words);
      break;
    }
  }

  const auto n = static_cast<Eigen::Index>(cfg.game.geometry.candidates());
  std::vector<Object> cands;
  cands.reserve(static_cast<std::size_t>(B * n));
  for (const auto& s : batch) {
    auto c = s.candidates();
    cands.insert(cands.end(), c.begin(), c.end());
  }
  const Matrix cand_x = worlds::encode_batch(cfg.world, cfg.world_seed, cands);

  if (cfg.game.kind == GameKind::Recon) {
    auto recon = a.recon_head(tape, a.receiver, zr);
    const Matrix target_x = targets.mean * worlds::encode_batch(cfg.world, cfg.world_seed, targets.objects);
    out.task_loss = mse(recon, tape.constant(target_x));
    // Test-time choice: candidate with the highest cosine similarity.
    out.scores.resize(B, n);
    for (Eigen::Index b = 0; b < B; ++b) {
      const Eigen::RowVectorXd r = recon.value().row(b);
      for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::RowVectorXd c = cand_x.row(b * n + k);
        const double denom = std::max(1e-12, r.norm() * c.norm());
        out.scores(b, k) = r.dot(c) / denom;
      }
    }
  } else {
    auto ur = a.receiver_encoder(tape, a.receiver, tape.constant(cand_x));
    auto scores = batched_dot(zr, ur, n);
    out.scores = scores.value();
    if (cfg.game.loss == LossKind::BCE) {
      Matrix labels(B, n);
      for (Eigen::Index b = 0; b < B; ++b) {
        const auto l = batch[static_cast<std::size_t>(b)].labels();
        for (Eigen::Index k = 0; k < n; ++k) labels(b, k) = l[static_cast<std::size_t>(k)];
      }
      out.task_loss = bce_with_logits(scores, labels);
    } else {
      std::vector<int> gold;
      for (const auto& s : batch) gold.push_back(s.gold());
      out.task_loss = softmax_cross_entropy(scores, std::span<const int>(gold));
    }
  }
  for (Eigen::Index b = 0; b < B; ++b)
    out.correct.push_back(episode_correct(cfg.game.kind, out.scores.row(b), batch[static_cast<std::size_t>(b)]));
  return out;
}

}  // namespace ctd::games
