#include <doctest.h>

#include "ctd/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

using namespace ctd;
using namespace ctd::trainer;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig e;
  e.train = 120;
  e.val = 40;
  e.test = 40;
  e.epochs = 3;
  e.patience = 2;
  e.word_dim = 12;
  e.latent_dim = 12;
  e.encoder_hidden = 16;
  e.sender_targets = 4;
  e.compose_length = 2;
  e.seed = 3;
  e.data_seed = 4;
  return e;
}

std::vector<char> bytes_of(const Checkpoint& ck) {
  const auto path = (std::filesystem::temp_directory_path() / "ctd_trainer_ck.bin").string();
  ck.save(path);
  std::ifstream in(path, std::ios::binary);
  std::vector<char> b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::remove(path.c_str());
  return b;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("combined loss bookkeeping") {
  CHECK(combined_loss(1.5, 0.25, 2.0) == 2.0);
  CHECK(combined_loss(1.5, 0.0, 1.0) == 1.5);
  CHECK_THROWS_AS(combined_loss(std::numeric_limits<double>::quiet_NaN(), 0.0, 1.0), TrainError);
}

TEST_CASE("regime names round trip") {
  for (auto r : {Regime::D, Regime::CD, Regime::CtD, Regime::CtDZS}) {
    CHECK(regime_from_string(to_string(r)) == r);
    CHECK(regime_from_string(cli_name(r)) == r);
  }
  CHECK_THROWS(regime_from_string("X"));
}

TEST_CASE("experiment config JSON round trip and validation") {
  ExperimentConfig e = tiny();
  e.world = worlds::World::Qrc;
  e.protocol = channels::Protocol::QT;
  ExperimentConfig back;
  apply_json(back, to_json(e));
  CHECK(to_json(back) == to_json(e));
  CHECK(config_hash(back) == config_hash(e));
  ExperimentConfig other = e;
  other.lr = 1e-3;
  CHECK(config_hash(other) != config_hash(e));
  CHECK_THROWS_AS(apply_json(back, nlohmann::json{{"nonsense", 1}}), TrainError);
  CHECK_THROWS_AS(apply_json(back, nlohmann::json{{"epochs", "many"}}), TrainError);
  CHECK_THROWS_AS(apply_json(back, nlohmann::json{{"batch", 0}}), TrainError);
  apply_json(back, nlohmann::json{{"epochs", 7}});
  CHECK(back.epochs == 7);
}

TEST_CASE("phase configs derive from the experiment") {
  const auto e = tiny();
  const auto d = decompose_data_config(e), c = compose_data_config(e);
  CHECK(d.mode == worlds::SplitMode::SingleConcept);
  CHECK(d.phrase_length == 1);
  CHECK(c.mode == worlds::SplitMode::CompositePhrase);
  CHECK(c.phrase_length == 2);
  CHECK(d.seed != c.seed);
  CHECK(d.geometry.sender_targets == 4);
  const auto td = decompose_train_config(e), tc = compose_train_config(e);
  CHECK(td.agents.channel.length == 1);
  CHECK(tc.agents.channel.length == 2);
  CHECK(td.adam.lr == e.lr);
}

TEST_CASE("training records epoch 0, keeps the best validation checkpoint and stops early") {
  auto e = tiny();
  e.epochs = 12;
  e.patience = 2;
  std::vector<EpochRecord> seen;
  const auto out = run_regime(Regime::D, e, nullptr, [&](const EpochRecord& r) { seen.push_back(r); });
  const auto& epochs = out.report.epochs;
  REQUIRE(!epochs.empty());
  CHECK(epochs.size() == seen.size());
  CHECK(epochs.front().epoch == 0);
  int best = 0;
  for (const auto& r : epochs) {
    CHECK(std::abs(r.val_combined - combined_loss(r.val_task, r.val_commitment, 1.0)) < 1e-12);
    if (r.val_combined < epochs[static_cast<std::size_t>(best)].val_combined) best = r.epoch;
  }
  CHECK(out.report.best_epoch == best);
  const int last = epochs.back().epoch;
  CHECK((last == e.epochs || last - best == e.patience));
  CHECK(out.report.targets == 4);
  CHECK(out.report.length == 1);
}

TEST_CASE("compose from decompose: CtD epoch 0 equals zero-shot evaluation") {
  const auto e = tiny();
  const auto d = run_regime(Regime::D, e);
  const auto data = worlds::build_split(compose_data_config(e));
  const auto zs = run_regime(Regime::CtDZS, e, data, &d.agents);
  std::vector<EpochRecord> seen;
  const auto ctd = run_regime(Regime::CtD, e, data, &d.agents, [&](const EpochRecord& r) { seen.push_back(r); });
  REQUIRE(!seen.empty());
  CHECK(std::abs(seen.front().val_combined - zs.report.epochs.front().val_combined) < 1e-9);
  CHECK(std::abs(seen.front().val_acc - zs.report.epochs.front().val_acc) < 1e-9);
  CHECK(zs.report.regime == Regime::CtDZS);
  CHECK(ctd.report.length == 2);

  // Composed agents share the sender and codebook and tile the receiver.
  const auto c = compose_from(d.agents, 2);
  CHECK(c.codebook.at(games::Agents::kWords) == d.agents.codebook.at(games::Agents::kWords));
  const auto& w1 = d.agents.receiver.at(d.agents.cb_rx.weight_name());
  const auto& w2 = c.receiver.at(c.cb_rx.weight_name());
  CHECK(w2.rows() == 2 * w1.rows());
  CHECK(w2.topRows(w1.rows()) == w1);
  CHECK(w2.bottomRows(w1.rows()) == w1);
  for (const auto& entry : c.receiver.entries()) CHECK(entry.m1.isZero());

  CHECK_THROWS_WITH_AS(run_regime(Regime::CtD, e, data, nullptr), "missing decompose checkpoint", TrainError);
  CHECK_THROWS_AS(run_regime(Regime::D, e, data), TrainError);
}

TEST_CASE("same config and seed give byte-identical checkpoints") {
  const auto e = tiny();
  const auto a = run_regime(Regime::D, e), b = run_regime(Regime::D, e);
  CHECK(bytes_of(a.checkpoint) == bytes_of(b.checkpoint));
  auto other = e;
  other.seed = 99;
  CHECK(bytes_of(run_regime(Regime::D, other).checkpoint) != bytes_of(a.checkpoint));
}

TEST_CASE("checkpoint round trip restores the agents") {
  const auto e = tiny();
  const auto a = run_regime(Regime::D, e);
  auto fresh = games::make_agents(decompose_train_config(e).agents, Rng(123));
  load_checkpoint(a.checkpoint, fresh);
  const auto data = worlds::build_split(decompose_data_config(e));
  const auto r1 = evaluate(fresh, data.test, 1.0), r2 = evaluate(const_cast<games::Agents&>(a.agents), data.test, 1.0);
  CHECK(r1.acc == r2.acc);
  CHECK(r1.combined == r2.combined);
  CHECK(fresh.usage == a.agents.usage);
}

TEST_CASE("report JSON round trip and tables") {
  const auto e = tiny();
  auto r = run_regime(Regime::D, e).report;
  const auto back = report_from_json(to_json(r));
  CHECK(csv_row(back) == csv_row(r));
  CHECK(back.epochs.size() == r.epochs.size());

  const auto single = report_table({r});
  CHECK(single == csv_header() + "\n" + csv_row(r) + "\n");

  auto r2 = r;
  r2.seed = 1;
  r2.test.acc = r.test.acc + 0.2;
  const auto merged = report_table({r, r2});
  CHECK(count_lines(merged) == 2);
  CHECK(merged.find("ACC_std") != std::string::npos);
  std::istringstream rows(merged);
  std::string header, row;
  std::getline(rows, header);
  std::getline(rows, row);
  CHECK(row.find(",2,") != std::string::npos);

  auto zs = r;
  zs.regime = Regime::CtDZS;
  zs.length = 5;
  CHECK(count_lines(report_table({zs, r})) == 3);
  CHECK_THROWS_AS(report_table({}), TrainError);
  auto bad = r2;
  bad.vocab = r.vocab + 1;
  CHECK_THROWS_AS(report_table({r, bad}), TrainError);
}
