#pragma once

// Discrete channels between sender latent and receiver latent.
//
// CB: nearest code-word lookup with straight-through gradient, commitment
//     and dictionary losses, EMA usage counts and dead-word re-initialization.
// GS: LSTM emits relaxed one-hot words via Gumbel-softmax.
// QT: LSTM emits sigmoid bit vectors rounded with a straight-through rule.

#include "ctd/diffcore/layers.hpp"
#include "ctd/diffcore/ops.hpp"
#include "ctd/diffcore/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ctd::channels {

enum class Protocol { CB, GS, QT };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

class ChannelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CodebookHyper {
  double gamma = 0.99;
  double delta = 10.0;
  double eps = 1e-5;
  double beta2 = 1.0;
};

struct ChannelConfig {
  Protocol protocol = Protocol::CB;
  int vocab = 50;            // code-words (CB) or categories (GS); QT uses 2^qt_bits
  int length = 1;            // words per message
  int word_dim = 100;        // CB code-word dimension
  int latent_dim = 100;      // sender/receiver latent width
  int embed_dim = 500;       // GS/QT word embedding width
  int hidden_dim = 100;      // GS/QT LSTM width
  double tau = 1.0;          // GS temperature
  int qt_bits = 6;           // QT word bit-length
  CodebookHyper cb;

  int vocab_size() const { return protocol == Protocol::QT ? (1 << qt_bits) : vocab; }
  void validate() const;
};

// Smallest bits with 2^bits >= concepts.
int qt_bits_for(int concepts);

// ---------------------------------------------------------------- codebook

// Ids of the l words nearest to each row of z (squared L2, ties to the lower
// id), returned sorted ascending.
std::vector<std::vector<int>> cb_select(const Matrix& z, const Matrix& words, int l);

struct CbQuantized {
  Var message;                   // B x (l*d): canonical concatenation, ST to z
  Var commitment;                // 1 x 1
  std::vector<std::vector<int>> ids;
};

// Quantizes the rows of z against `words` (a B x d latent and a W x d
// parameter). Commitment loss (mean over the B*l selected pairs):
//   |sg[z] - w|^2 + beta2 |z - sg[w]|^2
CbQuantized cb_quantize(const Var& z, const Var& words, int l, double beta2);

// |sg[z] - w|^2 + beta2 |z - sg[w]|^2 averaged over rows; z and w are matched
// row for row.
Var cb_commitment_loss(const Var& z, const Var& w, double beta2);

// N_k <- N_k * gamma + (n_k / B) * (1 - gamma)
void cb_ema_update(Eigen::VectorXd& usage, const std::vector<int>& counts, int batch, double gamma);

// alpha_k = exp(-N_k * W * delta / (1 - gamma) - eps)
Eigen::VectorXd cb_reinit_alpha(const Eigen::VectorXd& usage, const CodebookHyper& h);

// w_k <- w_k (1 - alpha_k) + zhat_k alpha_k with anchors zhat_k drawn from the
// rows of `latents` with probability proportional to exp(-|z_i - w_k|^2).
void cb_reinit(Matrix& words, const Eigen::VectorXd& usage, const Matrix& latents, const CodebookHyper& h, Rng& rng);

// Per-word selection counts for one batch.
std::vector<int> cb_counts(const std::vector<std::vector<int>>& ids, int vocab);

struct CodebookExport {
  Matrix words;
  Eigen::VectorXd usage;
  CodebookHyper hyper;
  std::string dataset_hash;
  std::string phase;
};

void write_codebook_json(const CodebookExport& cb, const std::string& path);
CodebookExport read_codebook_json(const std::string& path);

// ---------------------------------------------------------------- sequences

struct SeqMessage {
  std::vector<Var> words;  // l steps, each B x V (GS relaxed/one-hot) or B x bits (QT)
  std::vector<std::vector<int>> ids;
};

// Hard word id of a QT bit row, most significant bit first.
int qt_word_id(const Eigen::RowVectorXd& bits);
// Rounds a sigmoid output to {0,1}; exactly 0.5 rounds down.
Matrix qt_round(const Matrix& probs);

class GsSender {
 public:
  GsSender() = default;
  GsSender(ParamStore& store, const ChannelConfig& cfg, Rng& rng);
  // Training draws y = softmax((log pi + g) / tau); evaluation emits argmax
  // one-hot rows and consumes no randomness.
  SeqMessage encode(Tape& tape, ParamStore& store, const Var& u, int length, bool train, Rng& rng) const;

 private:
  ChannelConfig cfg_;
  Dense init_h_, out_;
  Lstm cell_;
  std::string embed_, sos_;
};

class QtSender {
 public:
  QtSender() = default;
  QtSender(ParamStore& store, const ChannelConfig& cfg, Rng& rng);
  SeqMessage encode(Tape& tape, ParamStore& store, const Var& u, int length) const;

 private:
  ChannelConfig cfg_;
  Dense init_h_, out_;
  Lstm cell_;
  std::string embed_, sos_;
};

// GS/QT receiver: embeds each word row, runs an LSTM over the l steps and
// projects the final hidden state to the latent width.
class SeqReceiver {
 public:
  SeqReceiver() = default;
  SeqReceiver(ParamStore& store, const ChannelConfig& cfg, Rng& rng);
  Var decode(Tape& tape, ParamStore& store, const std::vector<Var>& words) const;

 private:
  ChannelConfig cfg_;
  Lstm cell_;
  Dense out_;
  std::string embed_;
  int word_width_ = 0;
};

// CB receiver: linear map on the canonical concatenation of word vectors.
class CbReceiver {
 public:
  CbReceiver() = default;
  CbReceiver(ParamStore& store, const ChannelConfig& cfg, Rng& rng);
  Var decode(Tape& tape, ParamStore& store, const Var& message) const;
  const std::string& weight_name() const { return map_.weight_name(); }
  const std::string& bias_name() const { return map_.bias_name(); }

 private:
  Dense map_;
};

// Receiver map for length-l messages built from a length-1 map: the weight
// is stacked l times and the bias scaled by l, which equals summing the
// single-word decodings of every word.
std::pair<Matrix, Matrix> tile_cb_receiver(const Matrix& weight, const Matrix& bias, int length);

}  // namespace ctd::channels
