#pragma once

// Two-phase training: Decompose on Single-Concept data (message length 1),
// then Compose on Composite-Phrase data (message length = phrase length),
// either from scratch (C/D) or from the Decompose agents (CtD), plus the
// zero-shot evaluation of Decompose agents on Compose data (CtD-ZS).

#include "ctd/diffcore/adam.hpp"
#include "ctd/diffcore/checkpoint.hpp"
#include "ctd/games/games.hpp"
#include "ctd/metrics/metrics.hpp"
#include "ctd/worlds/world.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ctd::trainer {

enum class Regime { D, CD, CtD, CtDZS };

std::string to_string(Regime r);   // "D", "C/D", "CtD", "CtD-ZS"
std::string cli_name(Regime r);    // "D", "CD", "CTD", "CTDZS"
Regime regime_from_string(const std::string& s);

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  games::AgentConfig agents;
  int batch = 10;
  AdamConfig adam;
  int epochs = 60;
  int patience = 10;
  double beta1 = 1.0;
  std::uint64_t seed = 0;
  int eval_batch = 100;
  double divergence = 1e6;
  std::string phase = "decompose";
};

// L_t + beta1 * L_c; throws on non-finite input.
double combined_loss(double task, double commitment, double beta1);

struct EvalResult {
  double task = 0.0;
  double commitment = 0.0;
  double combined = 0.0;
  double acc = 0.0;
  metrics::Corpus corpus;
};

EvalResult evaluate(games::Agents& agents, const std::vector<worlds::GameSample>& samples, double beta1,
                    int eval_batch = 100);

struct EpochRecord {
  int epoch = 0;
  double train_task = 0.0, train_commitment = 0.0, train_combined = 0.0, train_acc = 0.0;
  double val_task = 0.0, val_commitment = 0.0, val_combined = 0.0, val_acc = 0.0;
};

struct PhaseResult {
  games::Agents best;
  int best_epoch = 0;
  EvalResult best_val;
  std::vector<EpochRecord> epochs;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Minibatch Adam on the combined loss with per-batch codebook EMA and
// re-initialization; epoch 0 is an evaluation of the initial agents. Returns
// the agents with the lowest combined validation loss.
PhaseResult train_phase(const TrainConfig& cfg, games::Agents init, const worlds::DatasetSplit& data,
                        const EpochCallback& on_epoch = {});

// One training epoch in place; exposed for tests.
EpochRecord train_epoch(const TrainConfig& cfg, games::Agents& agents, const std::vector<worlds::GameSample>& train,
                        int epoch);

// Compose-phase agents initialized from Decompose agents: sender, codebook
// and receiver encoder are copied, the CB receiver map is tiled to `length`
// words and optimizer moments start from zero.
games::Agents compose_from(const games::Agents& decompose, int length);

// Checkpoint file contents for a set of agents plus bookkeeping.
Checkpoint make_checkpoint(const games::Agents& a, int epoch, const EvalResult& val, std::uint64_t config_hash);
void load_checkpoint(const Checkpoint& ck, games::Agents& a);

std::uint64_t config_hash(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

struct RunReport {
  Regime regime = Regime::D;
  std::string dataset;
  std::string comm;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  int vocab = 0;           // #v
  int concepts = 0;        // #c
  int phrases = 0;         // #p: distinct test phrases
  int length = 0;          // l
  int targets = 0;         // sender targets per game
  int best_epoch = 0;
  std::vector<EpochRecord> epochs;
  metrics::MetricsReport test;
};

RunReport make_report(Regime regime, const TrainConfig& cfg, const worlds::DatasetSplit& data, const EvalResult& test,
                      int best_epoch, const std::vector<EpochRecord>& epochs);

nlohmann::json to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);

// Table columns: dataset, comm, regime, #v, #c, #p, l, #w, #m, ACC, AMI, POS,
// BOS, CI, CBM, ratio.
std::string csv_header();
std::string csv_row(const RunReport& r);

// Merged table over several reports. Reports sharing dataset, comm, regime,
// length and target count form one group; groups are sorted by those keys
// with regimes in D, C/D, CtD, CtD-ZS order. With one report per group the
// rows are csv_row(); otherwise every metric gets a mean and a sample-std
// column. Throws on an empty input or on groups whose sizes disagree.
std::string report_table(const std::vector<RunReport>& reports);

// Experiment-level options shared by all regimes.
struct ExperimentConfig {
  worlds::World world = worlds::World::Thing;
  std::uint64_t world_seed = 0;
  channels::Protocol protocol = channels::Protocol::CB;
  games::GameKind game = games::GameKind::Mref;
  int sender_targets = 20;
  int train = 10000, val = 1000, test = 1000;
  int compose_length = 5;
  int epochs = 120;
  int patience = 30;
  int batch = 10;
  double lr = 2e-3;
  double beta1 = 1.0;
  int word_dim = 100;
  int latent_dim = 100;
  int encoder_hidden = 100;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;
};

nlohmann::json to_json(const ExperimentConfig& e);
// Overrides the fields named in `j`; unknown keys and ill-typed values throw
// TrainError and leave `e` unchanged.
void apply_json(ExperimentConfig& e, const nlohmann::json& j);
std::uint64_t config_hash(const ExperimentConfig& e);

worlds::SplitConfig decompose_data_config(const ExperimentConfig& e);
worlds::SplitConfig compose_data_config(const ExperimentConfig& e);
TrainConfig decompose_train_config(const ExperimentConfig& e);
TrainConfig compose_train_config(const ExperimentConfig& e);

struct RegimeOutput {
  RunReport report;
  games::Agents agents;
  Checkpoint checkpoint;
};

// Runs one regime end to end. CtD and CtD-ZS need the Decompose agents.
RegimeOutput run_regime(Regime regime, const ExperimentConfig& e, const games::Agents* decompose = nullptr,
                        const EpochCallback& on_epoch = {});
// Same, on a dataset already built or loaded for this regime's phase.
RegimeOutput run_regime(Regime regime, const ExperimentConfig& e, const worlds::DatasetSplit& data,
                        const games::Agents* decompose = nullptr, const EpochCallback& on_epoch = {});

// One Decompose run per sender-target count with everything else fixed.
std::vector<RunReport> ablation_targets_sweep(const ExperimentConfig& e, const std::vector<int>& counts,
                                              const EpochCallback& on_epoch = {});

}  // namespace ctd::trainer
