#pragma once

// Coordination games: sender aggregates its targets, emits a message over a
// channel, receiver decodes and scores candidates by dot product.
//
//   game   sender      receiver     loss
//   Ref    1 / 0       1 / 20       CE
//   Recon  1 / 0       1 / 20*      MSE (reconstruct target features)
//   Diff   20 / 20     20 / 20      BCE per candidate
//   Mref   20 / 0      1 / 20       CE
//
// (* Recon candidates are only used for test-time accuracy.)

#include "ctd/channels/channels.hpp"
#include "ctd/diffcore/layers.hpp"
#include "ctd/worlds/world.hpp"

#include <span>
#include <string>
#include <vector>

namespace ctd::games {

enum class GameKind { Ref, Recon, Diff, Mref };
enum class LossKind { CE, MSE, BCE };

std::string to_string(GameKind g);
GameKind game_from_string(const std::string& s);

class GameError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GameConfig {
  GameKind kind = GameKind::Mref;
  worlds::GameGeometry geometry;
  LossKind loss = LossKind::CE;
};

// Default geometry and loss for each game.
GameConfig game_config(GameKind kind);

// Mean of the rows of u; throws on an empty set.
Matrix sender_aggregate(const Matrix& u);
// [mean(targets) | mean(distractors)].
Matrix diff_sender_aggregate(const Matrix& targets, const Matrix& distractors);
// score_i = z . u_i
Eigen::RowVectorXd receiver_score(const Eigen::RowVectorXd& z, const Matrix& candidates);

struct AgentConfig {
  worlds::World world = worlds::World::Thing;
  std::uint64_t world_seed = 0;
  GameConfig game;
  channels::ChannelConfig channel;
  int encoder_hidden = 500;
};

// Parameters and layer handles for one sender/receiver pair.
struct Agents {
  AgentConfig config;
  ParamStore sender, receiver, codebook;
  Eigen::VectorXd usage;  // CB EMA counts

  Mlp sender_encoder, receiver_encoder;
  Dense sender_proj;
  channels::GsSender gs;
  channels::QtSender qt;
  channels::CbReceiver cb_rx;
  channels::SeqReceiver seq_rx;
  Dense recon_head;

  static constexpr const char* kWords = "words";
};

// Builds freshly initialized agents. Parameters draw from fixed child
// streams of `rng` so adding one component never reshuffles another.
Agents make_agents(const AgentConfig& cfg, const Rng& rng);

struct EpisodeOutput {
  Var task_loss;
  Var commitment;     // CB only; invalid otherwise
  Matrix latents;     // sender channel input, B x d
  Matrix scores;      // B x candidates
  std::vector<std::vector<int>> messages;
  std::vector<double> correct;  // per episode, in [0, 1]
};

// Plays one batch. `train` switches GS to Gumbel sampling; everything else is
// identical between training and evaluation.
EpisodeOutput play_batch(Tape& tape, Agents& agents, std::span<const worlds::GameSample> batch, bool train, Rng& rng);

// Episode correctness from scores: argmax == gold for single-target games,
// mean per-candidate correctness at sigmoid > 0.5 for Diff.
double episode_correct(GameKind kind, const Eigen::RowVectorXd& scores, const worlds::GameSample& s);

double evaluate_accuracy(const std::vector<double>& correct);

}  // namespace ctd::games
