#include "ctd/channels/channels.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ctd::channels {

using nlohmann::json;

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::CB: return "cb";
    case Protocol::GS: return "gs";
    case Protocol::QT: return "qt";
  }
  return "?";
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "cb") return Protocol::CB;
  if (s == "gs") return Protocol::GS;
  if (s == "qt") return Protocol::QT;
  throw ChannelError("unknown channel '" + s + "'");
}

void ChannelConfig::validate() const {
  if (length < 1) throw ChannelError("channel: message length must be >= 1");
  if (protocol == Protocol::CB && length > vocab) throw ChannelError("channel: message length exceeds codebook size");
  if (vocab < 1 || word_dim < 1 || latent_dim < 1 || embed_dim < 1 || hidden_dim < 1)
    throw ChannelError("channel: sizes must be positive");
  if (protocol == Protocol::GS && !(tau > 0)) throw ChannelError("channel: GS temperature must be positive");
  if (protocol == Protocol::QT && (qt_bits < 1 || qt_bits > 20)) throw ChannelError("channel: QT bits out of range");
}

int qt_bits_for(int concepts) {
  int bits = 1;
  while ((1 << bits) < concepts) ++bits;
  return bits;
}

std::vector<std::vector<int>> cb_select(const Matrix& z, const Matrix& words, int l) {
  const auto W = static_cast<int>(words.rows());
  if (W == 0) throw ChannelError("cb_select: empty codebook");
  if (l < 1 || l > W) throw ChannelError("cb_select: need 1 <= l <= W");
  if (z.cols() != words.cols()) throw DimensionError("cb_select: latent and code-word widths differ");
  // |z - w|^2 = |z|^2 - 2 z.w + |w|^2; the |z|^2 term does not change the ranking.
  const Matrix d = (-2.0 * z * words.transpose()).rowwise() + words.rowwise().squaredNorm().transpose();
  std::vector<std::vector<int>> out(static_cast<std::size_t>(z.rows()));
  std::vector<int> idx(static_cast<std::size_t>(W));
  for (Eigen::Index b = 0; b < z.rows(); ++b) {
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + l, idx.end(), [&](int a, int c) {
      const double da = d(b, a), dc = d(b, c);
      return da < dc || (da == dc && a < c);
    });
    std::vector<int> pick(idx.begin(), idx.begin() + l);
    std::sort(pick.begin(), pick.end());
    out[static_cast<std::size_t>(b)] = std::move(pick);
  }
  return out;
}

Var cb_commitment_loss(const Var& z, const Var& w, double beta2) {
  auto dict = mean_row_sqdist(stop_gradient(z), w);
  auto commit = mean_row_sqdist(z, stop_gradient(w));
  return add(dict, scale(commit, beta2));
}

CbQuantized cb_quantize(const Var& z, const Var& words, int l, double beta2) {
  const Eigen::Index B = z.rows(), d = z.cols();
  CbQuantized q;
  q.ids = cb_select(z.value(), words.value(), l);
  Matrix forward(B, l * d);
  std::vector<int> flat;
  flat.reserve(static_cast<std::size_t>(B * l));
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int k = 0; k < l; ++k) {
      const int id = q.ids[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
      forward.block(b, k * d, 1, d) = words.value().row(id);
      flat.push_back(id);
    }
  }
  q.message = straight_through_tiled(z, std::move(forward), l);
  q.commitment = cb_commitment_loss(repeat_rows(z, l), gather_rows(words, std::move(flat)), beta2);
  return q;
}

void cb_ema_update(Eigen::VectorXd& usage, const std::vector<int>& counts, int batch, double gamma) {
  if (static_cast<Eigen::Index>(counts.size()) != usage.size()) throw DimensionError("cb_ema_update: count vector size");
  if (batch < 1) throw ChannelError("cb_ema_update: batch must be >= 1");
  for (Eigen::Index k = 0; k < usage.size(); ++k)
    usage(k) = usage(k) * gamma + (static_cast<double>(counts[static_cast<std::size_t>(k)]) / batch) * (1.0 - gamma);
}

Eigen::VectorXd cb_reinit_alpha(const Eigen::VectorXd& usage, const CodebookHyper& h) {
  const double W = static_cast<double>(usage.size());
  return (-usage.array() * W * h.delta / (1.0 - h.gamma) - h.eps).exp().matrix();
}

void cb_reinit(Matrix& words, const Eigen::VectorXd& usage, const Matrix& latents, const CodebookHyper& h, Rng& rng) {
  if (latents.rows() == 0) throw ChannelError("cb_reinit: empty batch");
  if (latents.cols() != words.cols()) throw DimensionError("cb_reinit: latent width differs from code-word width");
  if (usage.size() != words.rows()) throw DimensionError("cb_reinit: usage size differs from codebook size");
  const Eigen::VectorXd alpha = cb_reinit_alpha(usage, h);
  Eigen::VectorXd logits(latents.rows());
  for (Eigen::Index k = 0; k < words.rows(); ++k) {
    if (alpha(k) == 0.0) continue;
    for (Eigen::Index i = 0; i < latents.rows(); ++i) logits(i) = -(latents.row(i) - words.row(k)).squaredNorm();
    const Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp().matrix();
    double u = rng.uniform() * p.sum();
    Eigen::Index pick = latents.rows() - 1;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (u < p(i)) {
        pick = i;
        break;
      }
      u -= p(i);
    }
    words.row(k) = words.row(k) * (1.0 - alpha(k)) + latents.row(pick) * alpha(k);
  }
}

std::vector<int> cb_counts(const std::vector<std::vector<int>>& ids, int vocab) {
  std::vector<int> counts(static_cast<std::size_t>(vocab), 0);
  for (const auto& row : ids)
    for (int id : row) ++counts.at(static_cast<std::size_t>(id));
  return counts;
}

void write_codebook_json(const CodebookExport& cb, const std::string& path) {
  json words = json::array();
  for (Eigen::Index r = 0; r < cb.words.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < cb.words.cols(); ++c) row.push_back(cb.words(r, c));
    words.push_back(row);
  }
  json usage = json::array();
  for (Eigen::Index k = 0; k < cb.usage.size(); ++k) usage.push_back(cb.usage(k));
  json j{{"format", "ctd-codebook-1"},
         {"words", words},
         {"usage", usage},
         {"hyper", {{"gamma", cb.hyper.gamma}, {"delta", cb.hyper.delta}, {"eps", cb.hyper.eps}, {"beta2", cb.hyper.beta2}}},
         {"dataset_hash", cb.dataset_hash},
         {"phase", cb.phase}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write codebook file " + path);
  out << j.dump(1) << '\n';
}

CodebookExport read_codebook_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open codebook file " + path);
  const json j = json::parse(in);
  CodebookExport cb;
  const auto& words = j.at("words");
  const auto W = static_cast<Eigen::Index>(words.size());
  const auto d = W > 0 ? static_cast<Eigen::Index>(words.at(0).size()) : 0;
  cb.words.resize(W, d);
  for (Eigen::Index r = 0; r < W; ++r)
    for (Eigen::Index c = 0; c < d; ++c) cb.words(r, c) = words.at(r).at(c).get<double>();
  const auto& usage = j.at("usage");
  cb.usage.resize(static_cast<Eigen::Index>(usage.size()));
  for (std::size_t k = 0; k < usage.size(); ++k) cb.usage(static_cast<Eigen::Index>(k)) = usage.at(k).get<double>();
  const auto& h = j.at("hyper");
  cb.hyper = {h.at("gamma").get<double>(), h.at("delta").get<double>(), h.at("eps").get<double>(),
              h.at("beta2").get<double>()};
  cb.dataset_hash = j.at("dataset_hash").get<std::string>();
  cb.phase = j.at("phase").get<std::string>();
  return cb;
}

int qt_word_id(const Eigen::RowVectorXd& bits) {
  int id = 0;
  for (Eigen::Index k = 0; k < bits.size(); ++k) id = (id << 1) | (bits(k) > 0.5 ? 1 : 0);
  return id;
}

Matrix qt_round(const Matrix& probs) {
  return (probs.array() > 0.5).cast<double>().matrix();
}

namespace {

// Learned start-of-message input broadcast over the batch.
Var sos_rows(Tape& tape, ParamStore& store, const std::string& name, Eigen::Index batch) {
  return matmul(tape.constant(Matrix::Ones(batch, 1)), tape.param(store, name));
}

}  // namespace

GsSender::GsSender(ParamStore& store, const ChannelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      init_h_(store, "gs.init_h", cfg.latent_dim, cfg.hidden_dim, rng),
      out_(store, "gs.out", cfg.hidden_dim, cfg.vocab, rng),
      cell_(store, "gs.lstm", cfg.embed_dim, cfg.hidden_dim, rng),
      embed_("gs.embed"),
      sos_("gs.sos") {
  store.add(embed_, init_uniform(cfg.vocab, cfg.embed_dim, cfg.vocab, rng));
  store.add(sos_, init_uniform(1, cfg.embed_dim, cfg.embed_dim, rng));
}

SeqMessage GsSender::encode(Tape& tape, ParamStore& store, const Var& u, int length, bool train, Rng& rng) const {
  if (u.cols() != cfg_.latent_dim) throw DimensionError("gs_encode: latent width mismatch");
  const Eigen::Index B = u.rows();
  Lstm::State s{init_h_(tape, store, u), tape.constant(Matrix::Zero(B, cfg_.hidden_dim))};
  Var x = sos_rows(tape, store, sos_, B);
  SeqMessage msg;
  msg.ids.assign(static_cast<std::size_t>(B), {});
  for (int t = 0; t < length; ++t) {
    s = cell_.step(tape, store, x, s);
    auto logits = out_(tape, store, s.h);
    Var y;
    Matrix scores;
    if (train) {
      auto logp = log_softmax(logits);
      Matrix g(B, cfg_.vocab);
      for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index k = 0; k < cfg_.vocab; ++k) g(b, k) = rng.gumbel();
      auto noisy = add(logp, tape.constant(g));
      y = softmax(scale(noisy, 1.0 / cfg_.tau));
      scores = noisy.value();
    } else {
      scores = logits.value();
      Matrix hard = Matrix::Zero(B, cfg_.vocab);
      for (Eigen::Index b = 0; b < B; ++b) {
        Eigen::Index k;
        scores.row(b).maxCoeff(&k);
        hard(b, k) = 1.0;
      }
      y = tape.constant(std::move(hard));
    }
    for (Eigen::Index b = 0; b < B; ++b) {
      Eigen::Index k;
      scores.row(b).maxCoeff(&k);
      msg.ids[static_cast<std::size_t>(b)].push_back(static_cast<int>(k));
    }
    msg.words.push_back(y);
    x = matmul(y, tape.param(store, embed_));
  }
  return msg;
}

QtSender::QtSender(ParamStore& store, const ChannelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      init_h_(store, "qt.init_h", cfg.latent_dim, cfg.hidden_dim, rng),
      out_(store, "qt.out", cfg.hidden_dim, cfg.qt_bits, rng),
      cell_(store, "qt.lstm", cfg.embed_dim, cfg.hidden_dim, rng),
      embed_("qt.embed"),
      sos_("qt.sos") {
  store.add(embed_, init_uniform(cfg.qt_bits, cfg.embed_dim, cfg.qt_bits, rng));
  store.add(sos_, init_uniform(1, cfg.embed_dim, cfg.embed_dim, rng));
}

SeqMessage QtSender::encode(Tape& tape, ParamStore& store, const Var& u, int length) const {
  if (u.cols() != cfg_.latent_dim) throw DimensionError("qt_encode: latent width mismatch");
  const Eigen::Index B = u.rows();
  Lstm::State s{init_h_(tape, store, u), tape.constant(Matrix::Zero(B, cfg_.hidden_dim))};
  Var x = sos_rows(tape, store, sos_, B);
  SeqMessage msg;
  msg.ids.assign(static_cast<std::size_t>(B), {});
  for (int t = 0; t < length; ++t) {
    s = cell_.step(tape, store, x, s);
    auto p = sigmoid(out_(tape, store, s.h));
    auto bits = straight_through(p, qt_round(p.value()));
    for (Eigen::Index b = 0; b < B; ++b)
      msg.ids[static_cast<std::size_t>(b)].push_back(qt_word_id(bits.value().row(b)));
    msg.words.push_back(bits);
    x = matmul(bits, tape.param(store, embed_));
  }
  return msg;
}

SeqReceiver::SeqReceiver(ParamStore& store, const ChannelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      cell_(store, "seq_rx.lstm", cfg.embed_dim, cfg.hidden_dim, rng),
      out_(store, "seq_rx.out", cfg.hidden_dim, cfg.latent_dim, rng),
      embed_("seq_rx.embed"),
      word_width_(cfg.protocol == Protocol::QT ? cfg.qt_bits : cfg.vocab) {
  store.add(embed_, init_uniform(word_width_, cfg.embed_dim, word_width_, rng));
}

Var SeqReceiver::decode(Tape& tape, ParamStore& store, const std::vector<Var>& words) const {
  if (words.empty()) throw ChannelError("receiver_decode: empty message");
  const Eigen::Index B = words.front().rows();
  auto s = cell_.zero_state(tape, B);
  for (const auto& w : words) {
    if (w.cols() != word_width_) throw ChannelError("receiver_decode: word width does not match the receiver protocol");
    s = cell_.step(tape, store, matmul(w, tape.param(store, embed_)), s);
  }
  return out_(tape, store, s.h);
}

CbReceiver::CbReceiver(ParamStore& store, const ChannelConfig& cfg, Rng& rng)
    : map_(store, "cb_rx", static_cast<Eigen::Index>(cfg.length) * cfg.word_dim, cfg.latent_dim, rng) {}

Var CbReceiver::decode(Tape& tape, ParamStore& store, const Var& message) const {
  if (message.cols() != map_.in()) throw ChannelError("receiver_decode: message width does not match the CB receiver");
  return map_(tape, store, message);
}

std::pair<Matrix, Matrix> tile_cb_receiver(const Matrix& weight, const Matrix& bias, int length) {
  if (length < 1) throw ChannelError("tile_cb_receiver: length must be >= 1");
  Matrix w(weight.rows() * length, weight.cols());
  for (int k = 0; k < length; ++k) w.middleRows(k * weight.rows(), weight.rows()) = weight;
  return {w, bias * static_cast<double>(length)};
}

}  // namespace ctd::channels
