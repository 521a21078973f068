// ctd: dataset generation, training, evaluation and reporting.
//
// Precedence for experiment settings: built-in defaults, then --config, then
// individual flags. The output root is --out, else $CTD_OUT, else "runs".

#include "ctd/trainer/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctd;
using trainer::ExperimentConfig;
using trainer::Regime;

namespace {

struct Flags {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> regimes;
  std::string channel;
  std::string dataset;
  std::optional<int> targets;
  std::optional<int> epochs;
  std::string out;
  int jobs = 1;
  bool dry_run = false;
  bool zero_shot = false;
  bool corpus_only = false;
  bool quiet = false;
  std::string decompose;
  std::string checkpoint;
  std::string corpus;
  std::vector<std::string> inputs;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path out_root(const Flags& f) {
  if (!f.out.empty()) return f.out;
  if (const char* env = std::getenv("CTD_OUT"); env && *env) return env;
  return "runs";
}

ExperimentConfig experiment(const Flags& f) {
  ExperimentConfig e;
  if (!f.config.empty()) trainer::apply_json(e, read_json_file(f.config));
  json over = json::object();
  if (!f.dataset.empty()) over["dataset"] = f.dataset;
  if (!f.channel.empty()) over["channel"] = f.channel;
  if (f.targets) over["targets"] = *f.targets;
  if (f.epochs) over["epochs"] = *f.epochs;
  trainer::apply_json(e, over);
  return e;
}

std::vector<std::uint64_t> seeds_of(const Flags& f, const ExperimentConfig& e) {
  return f.seeds.empty() ? std::vector<std::uint64_t>{e.seed} : f.seeds;
}

fs::path dataset_path(const fs::path& root, const worlds::SplitConfig& s) {
  return root / "data" /
         (worlds::to_string(s.world) + "-" + worlds::to_string(s.mode) + "-" + hex(worlds::config_hash(s)) + ".jsonl");
}

fs::path run_dir(const fs::path& root, const ExperimentConfig& e) {
  return root / "runs" /
         (worlds::to_string(e.world) + "-" + channels::to_string(e.protocol) + "-t" + std::to_string(e.sender_targets) +
          "-s" + std::to_string(e.seed) + "-" + hex(trainer::config_hash(e)).substr(0, 8));
}

worlds::DatasetSplit load_dataset(const fs::path& root, const worlds::SplitConfig& s) {
  const fs::path p = dataset_path(root, s);
  if (!fs::exists(p)) throw std::runtime_error("dataset file not found: " + p.string() + " (run `ctd gen` first)");
  auto d = worlds::read_jsonl(p.string());
  if (worlds::config_hash(d.config) != worlds::config_hash(s))
    throw std::runtime_error("dataset header does not match the experiment config: " + p.string());
  return d;
}

json corpus_json(const trainer::RunReport& r, const trainer::EvalResult& ev) {
  return json{{"format", "ctd-corpus-1"}, {"dataset", r.dataset},        {"comm", r.comm},
              {"regime", trainer::to_string(r.regime)}, {"vocab", r.vocab}, {"length", r.length},
              {"targets", r.targets},                   {"seed", r.seed},   {"config_hash", r.config_hash},
              {"acc", ev.acc},                          {"messages", ev.corpus.messages},
              {"phrases", ev.corpus.phrases}};
}

games::Agents decompose_agents_from(const std::string& path, const ExperimentConfig& e) {
  const auto cfg = trainer::decompose_train_config(e);
  const auto ck = Checkpoint::load(path);
  if (ck.u64("__config_hash") != trainer::config_hash(cfg))
    throw std::runtime_error("decompose checkpoint " + path + " was trained under a different config");
  auto a = games::make_agents(cfg.agents, Rng(0));
  trainer::load_checkpoint(ck, a);
  return a;
}

void print_row(const trainer::RunReport& r) {
  std::cout << trainer::csv_row(r) << std::endl;
}

// Trains the requested regimes for one seed, in D, C/D, CtD, CtD-ZS order.
void train_seed(const Flags& f, ExperimentConfig e, const std::vector<Regime>& regimes) {
  const fs::path root = out_root(f);
  const fs::path dir = run_dir(root, e);
  fs::create_directories(dir);
  write_text(dir / "config.json", trainer::to_json(e).dump(2) + "\n");
  std::optional<games::Agents> decompose;
  for (Regime regime : regimes) {
    const bool compose = regime != Regime::D;
    const auto data = load_dataset(root, compose ? trainer::compose_data_config(e) : trainer::decompose_data_config(e));
    if ((regime == Regime::CtD || regime == Regime::CtDZS) && !decompose) {
      std::string path = f.decompose;
      if (path.empty() && fs::exists(dir / "D.ckpt")) path = (dir / "D.ckpt").string();
      if (path.empty()) throw trainer::TrainError("missing decompose checkpoint");
      decompose = decompose_agents_from(path, e);
    }
    const std::string tag = trainer::cli_name(regime);
    auto log = [&](const trainer::EpochRecord& r) {
      if (f.quiet) return;
      std::fprintf(stderr, "[%s seed %llu] epoch %3d  train %.4f acc %.3f  val %.4f acc %.3f\n", tag.c_str(),
                   static_cast<unsigned long long>(e.seed), r.epoch, r.train_combined, r.train_acc, r.val_combined,
                   r.val_acc);
    };
    auto out = trainer::run_regime(regime, e, data, decompose ? &*decompose : nullptr, log);
    out.checkpoint.save((dir / (tag + ".ckpt")).string());
    write_text(dir / (tag + ".report.json"), trainer::to_json(out.report).dump(1) + "\n");
    const auto cfg = compose ? trainer::compose_train_config(e) : trainer::decompose_train_config(e);
    const auto test = trainer::evaluate(out.agents, data.test, cfg.beta1, cfg.eval_batch);
    write_text(dir / (tag + ".corpus.json"), corpus_json(out.report, test).dump() + "\n");
    if (e.protocol == channels::Protocol::CB) {
      channels::CodebookExport cb{out.agents.codebook.at(games::Agents::kWords), out.agents.usage,
                                  out.agents.config.channel.cb, hex(worlds::config_hash(data.config)),
                                  compose ? "compose" : "decompose"};
      channels::write_codebook_json(cb, (dir / (tag + ".codebook.json")).string());
    }
    print_row(out.report);
    if (regime == Regime::D) decompose = std::move(out.agents);
  }
}

std::vector<Regime> parse_regimes(const std::vector<std::string>& names) {
  std::set<Regime> set;
  for (const auto& n : names) set.insert(trainer::regime_from_string(n));
  if (set.empty()) set.insert(Regime::D);
  return {set.begin(), set.end()};
}

int cmd_gen(const Flags& f) {
  const ExperimentConfig base = experiment(f);
  const fs::path root = out_root(f);
  for (auto s : {trainer::decompose_data_config(base), trainer::compose_data_config(base)}) {
    const fs::path p = dataset_path(root, s);
    if (f.dry_run) {
      std::cout << p.string() << '\n';
      continue;
    }
    fs::create_directories(p.parent_path());
    worlds::write_jsonl(worlds::build_split(s), p.string());
    std::cout << "wrote " << p.string() << '\n';
  }
  return 0;
}

int cmd_train(const Flags& f) {
  const ExperimentConfig base = experiment(f);
  const auto regimes = parse_regimes(f.regimes);
  const auto seeds = seeds_of(f, base);
  if (f.dry_run) {
    for (auto seed : seeds) {
      ExperimentConfig e = base;
      e.seed = seed;
      json j = trainer::to_json(e);
      j["regimes"] = json::array();
      for (Regime r : regimes) j["regimes"].push_back(trainer::cli_name(r));
      j["run_dir"] = run_dir(out_root(f), e).string();
      std::cout << j.dump(2) << '\n';
    }
    return 0;
  }
  std::cout << trainer::csv_header() << std::endl;
  if (f.jobs <= 1 || seeds.size() == 1) {
    for (auto seed : seeds) {
      ExperimentConfig e = base;
      e.seed = seed;
      train_seed(f, e, regimes);
    }
    return 0;
  }
  // One child process per seed, at most --jobs at a time.
  int failures = 0, running = 0;
  auto reap = [&] {
    int status = 0;
    if (::wait(&status) > 0 && !(WIFEXITED(status) && WEXITSTATUS(status) == 0)) ++failures;
    --running;
  };
  for (auto seed : seeds) {
    if (running >= f.jobs) reap();
    std::cout.flush();
    const pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      int code = 0;
      try {
        ExperimentConfig e = base;
        e.seed = seed;
        train_seed(f, e, regimes);
      } catch (const std::exception& ex) {
        std::cerr << "ctd train (seed " << seed << "): " << ex.what() << '\n';
        code = 1;
      }
      std::cout.flush();
      std::_Exit(code);
    }
    ++running;
  }
  while (running > 0) reap();
  return failures == 0 ? 0 : 1;
}

int cmd_eval(const Flags& f) {
  if (f.corpus_only) {
    if (f.corpus.empty()) throw std::runtime_error("--corpus-only needs --corpus PATH");
    const json j = read_json_file(f.corpus);
    if (j.value("format", "") != "ctd-corpus-1") throw std::runtime_error(f.corpus + ": not a corpus file");
    metrics::Corpus c{j.at("messages").get<std::vector<std::vector<int>>>(),
                      j.at("phrases").get<std::vector<std::vector<int>>>()};
    trainer::RunReport r;
    r.regime = trainer::regime_from_string(j.value("regime", "D"));
    r.dataset = j.value("dataset", "corpus");
    r.comm = j.value("comm", "cb");
    r.vocab = j.value("vocab", 0);
    r.concepts = worlds::kConcepts;
    std::set<std::vector<int>> phrases(c.phrases.begin(), c.phrases.end());
    r.phrases = static_cast<int>(phrases.size());
    r.length = j.value("length", c.messages.empty() ? 0 : static_cast<int>(c.messages.front().size()));
    r.test = metrics::evaluate(c, j.value("acc", 0.0));
    std::cout << trainer::csv_header() << '\n';
    print_row(r);
    return 0;
  }
  if (f.checkpoint.empty()) throw std::runtime_error("eval needs --checkpoint PATH (or --corpus-only)");
  const ExperimentConfig e = experiment(f);
  const auto ck = Checkpoint::load(f.checkpoint);
  const auto dcfg = trainer::decompose_train_config(e);
  const auto ccfg = trainer::compose_train_config(e);
  const std::uint64_t h = ck.u64("__config_hash");
  const fs::path root = out_root(f);
  Regime regime;
  games::Agents agents;
  trainer::TrainConfig cfg;
  worlds::DatasetSplit data;
  if (h == trainer::config_hash(dcfg)) {
    agents = games::make_agents(dcfg.agents, Rng(0));
    trainer::load_checkpoint(ck, agents);
    if (f.zero_shot) {
      if (e.protocol != channels::Protocol::CB) throw std::runtime_error("zero-shot evaluation needs the CB channel");
      agents = trainer::compose_from(agents, e.compose_length);
      regime = Regime::CtDZS;
      cfg = ccfg;
      data = load_dataset(root, trainer::compose_data_config(e));
    } else {
      regime = Regime::D;
      cfg = dcfg;
      data = load_dataset(root, trainer::decompose_data_config(e));
    }
  } else if (h == trainer::config_hash(ccfg)) {
    if (f.zero_shot) throw std::runtime_error("--zero-shot needs a decompose checkpoint");
    agents = games::make_agents(ccfg.agents, Rng(0));
    trainer::load_checkpoint(ck, agents);
    regime = f.regimes.empty() ? Regime::CtD : trainer::regime_from_string(f.regimes.front());
    cfg = ccfg;
    data = load_dataset(root, trainer::compose_data_config(e));
  } else {
    throw std::runtime_error("checkpoint does not match the experiment config (protocol or sizes differ)");
  }
  const auto test = trainer::evaluate(agents, data.test, cfg.beta1, cfg.eval_batch);
  const auto report = trainer::make_report(regime, cfg, data, test, 0, {});
  const std::string csv = trainer::csv_header() + "\n" + trainer::csv_row(report) + "\n";
  std::cout << csv;
  fs::path target = fs::path(f.checkpoint);
  target.replace_extension(regime == Regime::CtDZS ? ".zs-eval.csv" : ".eval.csv");
  write_text(target, csv);
  return 0;
}

int cmd_report(const Flags& f) {
  std::vector<std::string> files;
  for (const auto& in : f.inputs) {
    if (fs::is_directory(in)) {
      for (const auto& de : fs::recursive_directory_iterator(in))
        if (de.is_regular_file() && de.path().string().ends_with(".report.json")) files.push_back(de.path().string());
    } else {
      files.push_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<trainer::RunReport> reports;
  for (const auto& p : files) {
    try {
      reports.push_back(trainer::report_from_json(read_json_file(p)));
    } catch (const json::exception& e) {
      throw std::runtime_error(p + ": " + e.what());
    }
  }
  const std::string table = trainer::report_table(reports);
  std::cout << table;
  if (!f.out.empty()) write_text(f.out, table);
  return 0;
}

void add_experiment_flags(CLI::App* c, Flags& f) {
  c->add_option("--config", f.config, "experiment config JSON")->check(CLI::ExistingFile);
  c->add_option("--dataset", f.dataset, "thing or qrc");
  c->add_option("--channel", f.channel, "cb, gs or qt");
  c->add_option("--targets", f.targets, "sender targets per game");
  c->add_option("--epochs", f.epochs, "maximum epochs per phase");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-phase emergent communication experiments"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen", "write decompose and compose datasets");
  add_experiment_flags(gen, f);
  gen->add_option("--out", f.out, "output root");
  gen->add_flag("--dry-run", f.dry_run, "print target paths only");

  auto* train = app.add_subcommand("train", "train one or more regimes");
  add_experiment_flags(train, f);
  train->add_option("--seed", f.seeds, "run seed; repeat to fan out");
  train->add_option("--regime", f.regimes, "D, CD, CTD or CTDZS; repeatable");
  train->add_option("--decompose", f.decompose, "decompose checkpoint for CTD/CTDZS")->check(CLI::ExistingFile);
  train->add_option("--out", f.out, "output root");
  train->add_option("--jobs", f.jobs, "parallel seed processes")->check(CLI::PositiveNumber);
  train->add_flag("--dry-run", f.dry_run, "echo the resolved config without training");
  train->add_flag("--quiet", f.quiet, "no per-epoch log");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a saved corpus");
  add_experiment_flags(eval, f);
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint file")->check(CLI::ExistingFile);
  eval->add_option("--regime", f.regimes, "row label for compose checkpoints");
  eval->add_option("--out", f.out, "output root holding the datasets");
  eval->add_flag("--zero-shot", f.zero_shot, "evaluate a decompose checkpoint on compose data");
  eval->add_flag("--corpus-only", f.corpus_only, "metrics on --corpus without a model");
  eval->add_option("--corpus", f.corpus, "corpus JSON")->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "merge run reports into one CSV table");
  report->add_option("inputs", f.inputs, "report files or directories")->required();
  report->add_option("--out", f.out, "CSV file to write");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen(f);
    if (train->parsed()) return cmd_train(f);
    if (eval->parsed()) return cmd_eval(f);
    return cmd_report(f);
  } catch (const std::exception& e) {
    std::cerr << "ctd: " << e.what() << '\n';
    return 1;
  }
}
