#include "ctd/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace ctd::trainer {

using games::Agents;
using nlohmann::json;
using worlds::GameSample;

std::string to_string(Regime r) {
  switch (r) {
    case Regime::D: return "D";
    case Regime::CD: return "C/D";
    case Regime::CtD: return "CtD";
    case Regime::CtDZS: return "CtD-ZS";
  }
  return "?";
}

std::string cli_name(Regime r) {
  switch (r) {
    case Regime::D: return "D";
    case Regime::CD: return "CD";
    case Regime::CtD: return "CTD";
    case Regime::CtDZS: return "CTDZS";
  }
  return "?";
}

Regime regime_from_string(const std::string& s) {
  if (s == "D") return Regime::D;
  if (s == "CD" || s == "C/D") return Regime::CD;
  if (s == "CTD" || s == "CtD") return Regime::CtD;
  if (s == "CTDZS" || s == "CtD-ZS") return Regime::CtDZS;
  throw TrainError("unknown regime '" + s + "'");
}

double combined_loss(double task, double commitment, double beta1) {
  if (!std::isfinite(task) || !std::isfinite(commitment)) throw TrainError("combined_loss: non-finite input");
  return task + beta1 * commitment;
}

EvalResult evaluate(Agents& agents, const std::vector<GameSample>& samples, double beta1, int eval_batch) {
  if (samples.empty()) throw TrainError("evaluate: no samples");
  EvalResult r;
  Rng unused(0);
  std::vector<double> correct;
  double task = 0, commit = 0;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(eval_batch)) {
    const std::size_t n = std::min(samples.size() - start, static_cast<std::size_t>(eval_batch));
    std::span<const GameSample> batch(samples.data() + start, n);
    Tape tape;
    auto out = games::play_batch(tape, agents, batch, false, unused);
    task += out.task_loss.scalar() * static_cast<double>(n);
    if (out.commitment.valid()) commit += out.commitment.scalar() * static_cast<double>(n);
    correct.insert(correct.end(), out.correct.begin(), out.correct.end());
    for (std::size_t b = 0; b < n; ++b) {
      r.corpus.messages.push_back(out.messages[b]);
      r.corpus.phrases.push_back(batch[b].phrase.concept_ids());
    }
  }
  const double N = static_cast<double>(samples.size());
  r.task = task / N;
  r.commitment = commit / N;
  r.combined = combined_loss(r.task, r.commitment, beta1);
  r.acc = games::evaluate_accuracy(correct);
  return r;
}

EpochRecord train_epoch(const TrainConfig& cfg, Agents& a, const std::vector<GameSample>& train, int epoch) {
  if (train.empty()) throw TrainError("train_epoch: empty training set");
  Rng rng = Rng(cfg.seed).split(1000 + static_cast<std::uint64_t>(epoch));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const bool cb = a.config.channel.protocol == channels::Protocol::CB;
  EpochRecord rec;
  rec.epoch = epoch;
  double task = 0, commit = 0, correct = 0;
  std::vector<GameSample> batch;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
    const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch));
    batch.clear();
    for (std::size_t k = 0; k < n; ++k) batch.push_back(train[order[start + k]]);
    Tape tape;
    auto out = games::play_batch(tape, a, batch, true, rng);
    Var loss = out.commitment.valid() ? add(out.task_loss, scale(out.commitment, cfg.beta1)) : out.task_loss;
    const double lv = loss.scalar();
    if (!std::isfinite(lv) || lv > cfg.divergence) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << ", batch " << start / static_cast<std::size_t>(cfg.batch)
          << ": loss " << lv;
      throw TrainError(msg.str());
    }
    try {
      tape.backward(loss);
    } catch (const NumericError& e) {
      throw TrainError(std::string("training diverged: ") + e.what());
    }
    adam_step(a.sender, tape.take_grads(a.sender), cfg.adam);
    adam_step(a.receiver, tape.take_grads(a.receiver), cfg.adam);
    if (cb) {
      adam_step(a.codebook, tape.take_grads(a.codebook), cfg.adam);
      const auto& ch = a.config.channel;
      channels::cb_ema_update(a.usage, channels::cb_counts(out.messages, ch.vocab), static_cast<int>(n), ch.cb.gamma);
      channels::cb_reinit(a.codebook.at(Agents::kWords), a.usage, out.latents, ch.cb, rng);
    }
    task += out.task_loss.scalar() * static_cast<double>(n);
    if (out.commitment.valid()) commit += out.commitment.scalar() * static_cast<double>(n);
    for (double c : out.correct) correct += c;
  }
  const double N = static_cast<double>(train.size());
  rec.train_task = task / N;
  rec.train_commitment = commit / N;
  rec.train_combined = combined_loss(rec.train_task, rec.train_commitment, cfg.beta1);
  rec.train_acc = correct / N;
  return rec;
}

PhaseResult train_phase(const TrainConfig& cfg, Agents init, const worlds::DatasetSplit& data,
                        const EpochCallback& on_epoch) {
  if (cfg.epochs < 0) throw TrainError("train_phase: negative epoch count");
  if (cfg.batch < 1) throw TrainError("train_phase: batch must be >= 1");
  if (data.val.empty()) throw TrainError("train_phase: empty validation set");
  PhaseResult res;
  Agents cur = std::move(init);
  auto record_val = [&](EpochRecord& rec, const EvalResult& v) {
    rec.val_task = v.task;
    rec.val_commitment = v.commitment;
    rec.val_combined = v.combined;
    rec.val_acc = v.acc;
  };
  EvalResult v = evaluate(cur, data.val, cfg.beta1, cfg.eval_batch);
  EpochRecord rec0;
  record_val(rec0, v);
  res.epochs.push_back(rec0);
  if (on_epoch) on_epoch(rec0);
  res.best = cur;
  res.best_val = v;
  res.best_epoch = 0;
  int since_best = 0;
  for (int e = 1; e <= cfg.epochs; ++e) {
    EpochRecord rec = train_epoch(cfg, cur, data.train, e);
    v = evaluate(cur, data.val, cfg.beta1, cfg.eval_batch);
    record_val(rec, v);
    res.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (v.combined < res.best_val.combined) {
      res.best = cur;
      res.best_val = v;
      res.best_epoch = e;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return res;
}

Agents compose_from(const Agents& d, int length) {
  games::AgentConfig cfg = d.config;
  cfg.channel.length = length;
  Agents c = games::make_agents(cfg, Rng(0));
  for (auto& e : c.sender.entries()) e.value = d.sender.at(e.name);
  for (auto& e : c.codebook.entries()) e.value = d.codebook.at(e.name);
  c.usage = d.usage;
  for (auto& e : c.receiver.entries()) {
    if (cfg.channel.protocol == channels::Protocol::CB &&
        (e.name == c.cb_rx.weight_name() || e.name == c.cb_rx.bias_name()))
      continue;
    e.value = d.receiver.at(e.name);
  }
  if (cfg.channel.protocol == channels::Protocol::CB) {
    if (d.config.channel.length != 1) throw TrainError("compose_from: decompose agents must use length-1 messages");
    auto [w, b] = channels::tile_cb_receiver(d.receiver.at(d.cb_rx.weight_name()), d.receiver.at(d.cb_rx.bias_name()),
                                             length);
    c.receiver.at(c.cb_rx.weight_name()) = w;
    c.receiver.at(c.cb_rx.bias_name()) = b;
  }
  return c;
}

Checkpoint make_checkpoint(const Agents& a, int epoch, const EvalResult& val, std::uint64_t hash) {
  Checkpoint ck;
  ck.put_store("sender/", a.sender);
  ck.put_store("receiver/", a.receiver);
  ck.put_store("codebook/", a.codebook);
  ck.put("__usage", Matrix(a.usage.transpose()));
  ck.put_scalars("__epoch", {static_cast<double>(epoch)});
  ck.put_scalars("__val", {val.task, val.commitment, val.combined, val.acc});
  ck.put_u64("__config_hash", hash);
  return ck;
}

void load_checkpoint(const Checkpoint& ck, Agents& a) {
  ck.load_store("sender/", a.sender);
  ck.load_store("receiver/", a.receiver);
  ck.load_store("codebook/", a.codebook);
  const Matrix u = ck.matrix("__usage");
  if (u.size() != a.usage.size()) throw CheckpointError("checkpoint: usage size mismatch");
  a.usage = u.transpose();
}

json to_json(const TrainConfig& cfg) {
  const auto& ag = cfg.agents;
  const auto& ch = ag.channel;
  const auto& g = ag.game.geometry;
  return json{{"world", worlds::to_string(ag.world)},
              {"world_seed", ag.world_seed},
              {"game", games::to_string(ag.game.kind)},
              {"geometry", {g.sender_targets, g.sender_distractors, g.receiver_targets, g.receiver_distractors}},
              {"channel",
               {{"protocol", channels::to_string(ch.protocol)},
                {"vocab", ch.vocab},
                {"length", ch.length},
                {"word_dim", ch.word_dim},
                {"latent_dim", ch.latent_dim},
                {"embed_dim", ch.embed_dim},
                {"hidden_dim", ch.hidden_dim},
                {"tau", ch.tau},
                {"qt_bits", ch.qt_bits},
                {"gamma", ch.cb.gamma},
                {"delta", ch.cb.delta},
                {"eps", ch.cb.eps},
                {"beta2", ch.cb.beta2}}},
              {"encoder_hidden", ag.encoder_hidden},
              {"batch", cfg.batch},
              {"lr", cfg.adam.lr},
              {"adam", {cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps}},
              {"epochs", cfg.epochs},
              {"patience", cfg.patience},
              {"beta1", cfg.beta1},
              {"seed", cfg.seed},
              {"eval_batch", cfg.eval_batch},
              {"phase", cfg.phase}};
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(cfg).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunReport make_report(Regime regime, const TrainConfig& cfg, const worlds::DatasetSplit& data, const EvalResult& test,
                      int best_epoch, const std::vector<EpochRecord>& epochs) {
  RunReport r;
  r.regime = regime;
  r.dataset = worlds::to_string(data.config.world);
  r.comm = channels::to_string(cfg.agents.channel.protocol);
  r.seed = cfg.seed;
  r.config_hash = config_hash(cfg);
  r.vocab = cfg.agents.channel.vocab_size();
  r.concepts = worlds::kConcepts;
  std::set<std::string> phrases;
  for (const auto& s : data.test) phrases.insert(s.phrase.key());
  r.phrases = static_cast<int>(phrases.size());
  r.length = cfg.agents.channel.length;
  r.targets = cfg.agents.game.geometry.sender_targets;
  r.best_epoch = best_epoch;
  r.epochs = epochs;
  r.test = metrics::evaluate(test.corpus, test.acc);
  return r;
}

namespace {

json epoch_json(const EpochRecord& e) {
  return json{{"epoch", e.epoch},
              {"train_task", e.train_task},
              {"train_commitment", e.train_commitment},
              {"train_combined", e.train_combined},
              {"train_acc", e.train_acc},
              {"val_task", e.val_task},
              {"val_commitment", e.val_commitment},
              {"val_combined", e.val_combined},
              {"val_acc", e.val_acc}};
}

EpochRecord epoch_from_json(const json& j) {
  EpochRecord e;
  e.epoch = j.at("epoch").get<int>();
  e.train_task = j.at("train_task").get<double>();
  e.train_commitment = j.at("train_commitment").get<double>();
  e.train_combined = j.at("train_combined").get<double>();
  e.train_acc = j.at("train_acc").get<double>();
  e.val_task = j.at("val_task").get<double>();
  e.val_commitment = j.at("val_commitment").get<double>();
  e.val_combined = j.at("val_combined").get<double>();
  e.val_acc = j.at("val_acc").get<double>();
  return e;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

json to_json(const RunReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) epochs.push_back(epoch_json(e));
  const auto& t = r.test;
  return json{{"format", "ctd-report-1"},
              {"regime", to_string(r.regime)},
              {"dataset", r.dataset},
              {"comm", r.comm},
              {"seed", r.seed},
              {"config_hash", r.config_hash},
              {"vocab", r.vocab},
              {"concepts", r.concepts},
              {"phrases", r.phrases},
              {"length", r.length},
              {"targets", r.targets},
              {"best_epoch", r.best_epoch},
              {"epochs", epochs},
              {"test",
               {{"ACC", t.acc},
                {"AMI", t.ami},
                {"POS", t.pos},
                {"BOS", t.bos},
                {"CI", t.ci},
                {"CBM", t.cbm},
                {"#w", t.words},
                {"#m", t.messages},
                {"#c", t.concepts},
                {"ambiguous", t.ambiguous},
                {"paraphrase", t.paraphrase},
                {"ci_converged", t.ci_converged}}}};
}

RunReport report_from_json(const json& j) {
  if (j.value("format", "") != "ctd-report-1") throw TrainError("run report: unknown format");
  RunReport r;
  r.regime = regime_from_string(j.at("regime").get<std::string>());
  r.dataset = j.at("dataset").get<std::string>();
  r.comm = j.at("comm").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::uint64_t>();
  r.vocab = j.at("vocab").get<int>();
  r.concepts = j.at("concepts").get<int>();
  r.phrases = j.at("phrases").get<int>();
  r.length = j.at("length").get<int>();
  r.targets = j.at("targets").get<int>();
  r.best_epoch = j.at("best_epoch").get<int>();
  for (const auto& e : j.at("epochs")) r.epochs.push_back(epoch_from_json(e));
  const auto& t = j.at("test");
  r.test.acc = t.at("ACC").get<double>();
  r.test.ami = t.at("AMI").get<double>();
  r.test.pos = t.at("POS").get<double>();
  r.test.bos = t.at("BOS").get<double>();
  r.test.ci = t.at("CI").get<double>();
  r.test.cbm = t.at("CBM").get<double>();
  r.test.words = t.at("#w").get<long>();
  r.test.messages = t.at("#m").get<long>();
  r.test.concepts = t.at("#c").get<int>();
  r.test.ambiguous = t.at("ambiguous").get<double>();
  r.test.paraphrase = t.at("paraphrase").get<double>();
  r.test.ci_converged = t.at("ci_converged").get<bool>();
  return r;
}

std::string csv_header() { return "dataset,comm,regime,#v,#c,#p,l,#w,#m,ACC,AMI,POS,BOS,CI,CBM,ratio"; }

std::string csv_row(const RunReport& r) {
  const auto& t = r.test;
  std::ostringstream s;
  s << r.dataset << ',' << r.comm << ',' << to_string(r.regime) << ',' << r.vocab << ',' << r.concepts << ','
    << r.phrases << ',' << r.length << ',' << t.words << ',' << t.messages << ',' << fmt3(t.acc) << ','
    << fmt3(t.ami) << ',' << fmt3(t.pos) << ',' << fmt3(t.bos) << ',' << fmt3(t.ci) << ',' << fmt3(t.cbm) << ','
    << fmt3(static_cast<double>(t.words) / r.concepts);
  return s.str();
}

std::string report_table(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw TrainError("report: no run reports");
  using Key = std::tuple<std::string, std::string, int, int, int>;
  std::map<Key, std::vector<const RunReport*>> groups;
  for (const auto& r : reports)
    groups[{r.dataset, r.comm, static_cast<int>(r.regime), r.length, r.targets}].push_back(&r);
  bool multi = false;
  for (const auto& [k, g] : groups) {
    multi = multi || g.size() > 1;
    for (const auto* r : g)
      if (r->vocab != g.front()->vocab || r->concepts != g.front()->concepts || r->phrases != g.front()->phrases)
        throw TrainError("report: reports of one group disagree on #v/#c/#p");
  }
  std::ostringstream s;
  if (!multi) {
    s << csv_header() << '\n';
    for (const auto& [k, g] : groups) s << csv_row(*g.front()) << '\n';
    return s.str();
  }
  s << "dataset,comm,regime,seeds,#v,#c,#p,l";
  for (const char* m : {"#w", "#m", "ACC", "AMI", "POS", "BOS", "CI", "CBM", "ratio"}) s << ',' << m << ',' << m << "_std";
  s << '\n';
  for (const auto& [k, g] : groups) {
    const RunReport& f = *g.front();
    s << f.dataset << ',' << f.comm << ',' << to_string(f.regime) << ',' << g.size() << ',' << f.vocab << ','
      << f.concepts << ',' << f.phrases << ',' << f.length;
    auto column = [&](auto get) {
      double mean = 0, sq = 0;
      for (const auto* r : g) mean += get(*r);
      mean /= static_cast<double>(g.size());
      for (const auto* r : g) sq += (get(*r) - mean) * (get(*r) - mean);
      const double sd = g.size() > 1 ? std::sqrt(sq / static_cast<double>(g.size() - 1)) : 0.0;
      s << ',' << fmt3(mean) << ',' << fmt3(sd);
    };
    column([](const RunReport& r) { return static_cast<double>(r.test.words); });
    column([](const RunReport& r) { return static_cast<double>(r.test.messages); });
    column([](const RunReport& r) { return r.test.acc; });
    column([](const RunReport& r) { return r.test.ami; });
    column([](const RunReport& r) { return r.test.pos; });
    column([](const RunReport& r) { return r.test.bos; });
    column([](const RunReport& r) { return r.test.ci; });
    column([](const RunReport& r) { return r.test.cbm; });
    column([](const RunReport& r) { return static_cast<double>(r.test.words) / r.concepts; });
    s << '\n';
  }
  return s.str();
}

namespace {

worlds::GameGeometry geometry_for(const ExperimentConfig& e) {
  auto g = games::game_config(e.game).geometry;
  if (e.game == games::GameKind::Mref || e.game == games::GameKind::Diff) g.sender_targets = e.sender_targets;
  return g;
}

TrainConfig base_train_config(const ExperimentConfig& e, int length) {
  TrainConfig t;
  auto& ag = t.agents;
  ag.world = e.world;
  ag.world_seed = e.world_seed;
  ag.game = games::game_config(e.game);
  ag.game.geometry = geometry_for(e);
  ag.encoder_hidden = e.encoder_hidden;
  auto& ch = ag.channel;
  ch.protocol = e.protocol;
  ch.vocab = worlds::kConcepts;
  ch.length = length;
  ch.word_dim = e.word_dim;
  ch.latent_dim = e.latent_dim;
  ch.qt_bits = channels::qt_bits_for(worlds::kConcepts);
  t.batch = e.batch;
  t.adam.lr = e.lr;
  t.epochs = e.epochs;
  t.patience = e.patience;
  t.beta1 = e.beta1;
  return t;
}

}  // namespace

json to_json(const ExperimentConfig& e) {
  return json{{"format", "ctd-experiment-1"},
              {"dataset", worlds::to_string(e.world)},
              {"world_seed", e.world_seed},
              {"channel", channels::to_string(e.protocol)},
              {"game", games::to_string(e.game)},
              {"targets", e.sender_targets},
              {"train", e.train},
              {"val", e.val},
              {"test", e.test},
              {"compose_length", e.compose_length},
              {"epochs", e.epochs},
              {"patience", e.patience},
              {"batch", e.batch},
              {"lr", e.lr},
              {"beta1", e.beta1},
              {"word_dim", e.word_dim},
              {"latent_dim", e.latent_dim},
              {"encoder_hidden", e.encoder_hidden},
              {"seed", e.seed},
              {"data_seed", e.data_seed}};
}

void apply_json(ExperimentConfig& out, const json& j) {
  if (!j.is_object()) throw TrainError("experiment config: expected a JSON object");
  ExperimentConfig e = out;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "format") {
        if (v.get<std::string>() != "ctd-experiment-1") throw TrainError("experiment config: unknown format");
      } else if (key == "dataset") {
        e.world = worlds::world_from_string(v.get<std::string>());
      } else if (key == "world_seed") {
        e.world_seed = v.get<std::uint64_t>();
      } else if (key == "channel") {
        e.protocol = channels::protocol_from_string(v.get<std::string>());
      } else if (key == "game") {
        e.game = games::game_from_string(v.get<std::string>());
      } else if (key == "targets") {
        e.sender_targets = v.get<int>();
      } else if (key == "train") {
        e.train = v.get<int>();
      } else if (key == "val") {
        e.val = v.get<int>();
      } else if (key == "test") {
        e.test = v.get<int>();
      } else if (key == "compose_length") {
        e.compose_length = v.get<int>();
      } else if (key == "epochs") {
        e.epochs = v.get<int>();
      } else if (key == "patience") {
        e.patience = v.get<int>();
      } else if (key == "batch") {
        e.batch = v.get<int>();
      } else if (key == "lr") {
        e.lr = v.get<double>();
      } else if (key == "beta1") {
        e.beta1 = v.get<double>();
      } else if (key == "word_dim") {
        e.word_dim = v.get<int>();
      } else if (key == "latent_dim") {
        e.latent_dim = v.get<int>();
      } else if (key == "encoder_hidden") {
        e.encoder_hidden = v.get<int>();
      } else if (key == "seed") {
        e.seed = v.get<std::uint64_t>();
      } else if (key == "data_seed") {
        e.data_seed = v.get<std::uint64_t>();
      } else {
        throw TrainError("experiment config: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& ex) {
    throw TrainError(std::string("experiment config: ") + ex.what());
  }
  if (e.sender_targets < 1) throw TrainError("experiment config: targets must be >= 1");
  if (e.train < 1 || e.val < 1 || e.test < 1) throw TrainError("experiment config: split sizes must be >= 1");
  if (e.compose_length < 1 || e.compose_length > worlds::kAttributes)
    throw TrainError("experiment config: compose_length must be in 1..5");
  if (e.epochs < 0 || e.patience < 1 || e.batch < 1) throw TrainError("experiment config: bad epoch/patience/batch");
  if (!(e.lr > 0)) throw TrainError("experiment config: lr must be positive");
  if (e.word_dim < 1 || e.latent_dim < 1 || e.encoder_hidden < 1) throw TrainError("experiment config: sizes must be positive");
  out = e;
}

std::uint64_t config_hash(const ExperimentConfig& e) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(e).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

worlds::SplitConfig decompose_data_config(const ExperimentConfig& e) {
  worlds::SplitConfig s;
  s.world = e.world;
  s.world_seed = e.world_seed;
  s.mode = worlds::SplitMode::SingleConcept;
  s.phrase_length = 1;
  s.geometry = geometry_for(e);
  s.train = e.train;
  s.val = e.val;
  s.test = e.test;
  s.seed = splitmix64(e.data_seed ^ 0xDEC0ULL);
  return s;
}

worlds::SplitConfig compose_data_config(const ExperimentConfig& e) {
  worlds::SplitConfig s = decompose_data_config(e);
  s.mode = worlds::SplitMode::CompositePhrase;
  s.phrase_length = e.compose_length;
  s.seed = splitmix64(e.data_seed ^ 0xC0C0ULL);
  return s;
}

TrainConfig decompose_train_config(const ExperimentConfig& e) {
  TrainConfig t = base_train_config(e, 1);
  t.seed = splitmix64(e.seed ^ 0xDEC0ULL);
  t.phase = "decompose";
  return t;
}

TrainConfig compose_train_config(const ExperimentConfig& e) {
  TrainConfig t = base_train_config(e, e.compose_length);
  t.seed = splitmix64(e.seed ^ 0xC0C0ULL);
  t.phase = "compose";
  return t;
}

RegimeOutput run_regime(Regime regime, const ExperimentConfig& e, const Agents* decompose, const EpochCallback& on_epoch) {
  const auto data = worlds::build_split(regime == Regime::D ? decompose_data_config(e) : compose_data_config(e));
  return run_regime(regime, e, data, decompose, on_epoch);
}

RegimeOutput run_regime(Regime regime, const ExperimentConfig& e, const worlds::DatasetSplit& data,
                        const Agents* decompose, const EpochCallback& on_epoch) {
  const bool single = data.config.mode == worlds::SplitMode::SingleConcept;
  if (single != (regime == Regime::D))
    throw TrainError("run_regime: " + to_string(regime) + " needs a " + (single ? "composite" : "single") + "-concept dataset");
  TrainConfig cfg = regime == Regime::D ? decompose_train_config(e) : compose_train_config(e);
  if (data.config.phrase_length != cfg.agents.channel.length)
    throw TrainError("run_regime: dataset phrase length differs from the message length");
  RegimeOutput out;
  auto finish = [&](PhaseResult res) {
    const auto test = evaluate(res.best, data.test, cfg.beta1, cfg.eval_batch);
    out.report = make_report(regime, cfg, data, test, res.best_epoch, res.epochs);
    out.checkpoint = make_checkpoint(res.best, res.best_epoch, res.best_val, config_hash(cfg));
    out.agents = std::move(res.best);
  };
  if (regime == Regime::D || regime == Regime::CD) {
    finish(train_phase(cfg, games::make_agents(cfg.agents, Rng(cfg.seed).split(0)), data, on_epoch));
    return out;
  }
  if (!decompose) throw TrainError("missing decompose checkpoint");
  Agents init = compose_from(*decompose, e.compose_length);
  if (regime == Regime::CtDZS) {
    if (e.protocol != channels::Protocol::CB) throw TrainError("zero-shot evaluation is defined for the CB channel only");
    const auto val = evaluate(init, data.val, cfg.beta1, cfg.eval_batch);
    const auto test = evaluate(init, data.test, cfg.beta1, cfg.eval_batch);
    EpochRecord rec;
    rec.val_task = val.task;
    rec.val_commitment = val.commitment;
    rec.val_combined = val.combined;
    rec.val_acc = val.acc;
    cfg.epochs = 0;
    out.report = make_report(regime, cfg, data, test, 0, {rec});
    out.checkpoint = make_checkpoint(init, 0, val, config_hash(cfg));
    out.agents = std::move(init);
    return out;
  }
  finish(train_phase(cfg, std::move(init), data, on_epoch));
  return out;
}

std::vector<RunReport> ablation_targets_sweep(const ExperimentConfig& e, const std::vector<int>& counts,
                                              const EpochCallback& on_epoch) {
  std::vector<RunReport> out;
  for (int n : counts) {
    if (n < 1) throw TrainError("ablation: target counts must be >= 1");
    ExperimentConfig x = e;
    x.sender_targets = n;
    out.push_back(run_regime(Regime::D, x, nullptr, on_epoch).report);
  }
  return out;
}

}  // namespace ctd::trainer
