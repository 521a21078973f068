// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   ctd_acceptance [--only 1,6,7] [--out DIR]

#include "../support/oracles.hpp"
#include "ctd/diffcore/gradcheck.hpp"
#include "ctd/trainer/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>

using namespace ctd;
using namespace ctd::trainer;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string metrics_line(const RunReport& r) {
  return "ACC " + fmt("%.3f", r.test.acc) + " AMI " + fmt("%.3f", r.test.ami) + " CI " + fmt("%.3f", r.test.ci) +
         " CBM " + fmt("%.3f", r.test.cbm);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& tag, const EpochRecord& r) {
  std::fprintf(stderr, "  [%s] epoch %d val acc %.3f combined %.3f\n", tag.c_str(), r.epoch, r.val_acc, r.val_combined);
}

// Full-size runs shared between criteria, built on first use.
class Runs {
 public:
  explicit Runs(std::string out) : out_(std::move(out)) {}

  ExperimentConfig thing() const { return ExperimentConfig{}; }
  ExperimentConfig qrc() const {
    ExperimentConfig e;
    e.world = worlds::World::Qrc;
    return e;
  }

  const RegimeOutput& thing_d() {
    if (!thing_d_) {
      const auto t0 = std::chrono::steady_clock::now();
      thing_d_ = run("thing-D", Regime::D, thing(), nullptr);
      thing_d_seconds_ = seconds_since(t0);
    }
    return *thing_d_;
  }
  double thing_d_seconds() {
    thing_d();
    return thing_d_seconds_;
  }
  const RegimeOutput& thing_zs() {
    if (!thing_zs_) thing_zs_ = run("thing-CtD-ZS", Regime::CtDZS, thing(), &thing_d().agents);
    return *thing_zs_;
  }
  const RegimeOutput& thing_ctd() {
    if (!thing_ctd_) thing_ctd_ = run("thing-CtD", Regime::CtD, thing(), &thing_d().agents);
    return *thing_ctd_;
  }
  const RegimeOutput& thing_cd() {
    if (!thing_cd_) thing_cd_ = run("thing-C/D", Regime::CD, thing(), nullptr);
    return *thing_cd_;
  }
  const RegimeOutput& qrc_d() {
    if (!qrc_d_) qrc_d_ = run("qrc-D", Regime::D, qrc(), nullptr);
    return *qrc_d_;
  }
  const RegimeOutput& qrc_ctd() {
    if (!qrc_ctd_) qrc_ctd_ = run("qrc-CtD", Regime::CtD, qrc(), &qrc_d().agents);
    return *qrc_ctd_;
  }
  const RegimeOutput& thing_d_one_target() {
    if (!one_) {
      auto e = thing();
      e.sender_targets = 1;
      one_ = run("thing-D-1target", Regime::D, e, nullptr);
    }
    return *one_;
  }

  void write_table() const {
    if (out_.empty() || reports_.empty()) return;
    std::ofstream(out_ + "/acceptance_table.csv") << report_table(reports_);
  }

 private:
  RegimeOutput run(const std::string& tag, Regime r, const ExperimentConfig& e, const games::Agents* d) {
    std::fprintf(stderr, "running %s\n", tag.c_str());
    auto out = run_regime(r, e, d, [&](const EpochRecord& rec) { progress(tag, rec); });
    std::fprintf(stderr, "  %s\n", csv_row(out.report).c_str());
    reports_.push_back(out.report);
    if (!out_.empty()) {
      std::string file = tag;
      std::replace(file.begin(), file.end(), '/', '_');
      std::ofstream(out_ + "/" + file + ".report.json") << to_json(out.report).dump(2);
    }
    return out;
  }

  std::string out_;
  std::vector<RunReport> reports_;
  std::optional<RegimeOutput> thing_d_, thing_zs_, thing_ctd_, thing_cd_, qrc_d_, qrc_ctd_, one_;
  double thing_d_seconds_ = 0.0;
};

// ----------------------------------------------------------------- criteria

Outcome c1(Runs& runs) {
  const auto& r = runs.thing_d().report;
  const double secs = runs.thing_d_seconds();
  const bool ok = r.test.acc >= 0.98 && r.test.ami >= 0.98 && r.test.ci >= 0.98 && r.test.cbm >= 0.98 && secs <= 1200;
  return {ok, "THING CB-D " + metrics_line(r) + " time " + fmt("%.0f", secs) + "s"};
}

Outcome c2(Runs& runs) {
  const auto& r = runs.thing_zs().report;
  return {r.test.acc >= 0.95 && r.test.cbm >= 0.95, "THING CtD-ZS l=5 " + metrics_line(r)};
}

Outcome c3(Runs& runs) {
  const auto& cd = runs.thing_cd().report;
  const auto& ctd = runs.thing_ctd().report;
  const double gap = ctd.test.acc - cd.test.acc;
  const bool ok = cd.test.acc <= 0.6 && cd.test.cbm <= 0.5 && gap >= 0.3;
  return {ok, "C/D ACC " + fmt("%.3f", cd.test.acc) + " CBM " + fmt("%.3f", cd.test.cbm) + ", CtD ACC " +
                  fmt("%.3f", ctd.test.acc) + ", gap " + fmt("%.3f", gap)};
}

Outcome c4(Runs& runs) {
  const auto& q = runs.qrc_ctd().report;
  const auto& t = runs.thing_ctd().report;
  const double gap = t.test.cbm - q.test.cbm;
  const bool ok = q.test.acc >= 0.8 && q.test.cbm <= 0.35 && gap >= 0.5;
  return {ok, "QRC CtD ACC " + fmt("%.3f", q.test.acc) + " CBM " + fmt("%.3f", q.test.cbm) + ", THING CtD CBM " +
                  fmt("%.3f", t.test.cbm) + ", gap " + fmt("%.3f", gap)};
}

Outcome c5(Runs& runs) {
  const double many = runs.thing_d().report.test.cbm, one = runs.thing_d_one_target().report.test.cbm;
  return {many - one >= 0.3, "CBM 20 targets " + fmt("%.3f", many) + ", 1 target " + fmt("%.3f", one) + ", gap " +
                                 fmt("%.3f", many - one)};
}

Outcome c6() {
  Rng rng(606);
  int cbm_bad = 0;
  for (int i = 0; i < 200; ++i) {
    const int w = 1 + static_cast<int>(rng.below(7)), k = 1 + static_cast<int>(rng.below(7));
    const auto c = oracle::random_small_corpus(rng, w, k, 5 + static_cast<int>(rng.below(40)));
    cbm_bad += std::abs(metrics::cbm(c).score - oracle::cbm_exhaustive(c)) > 1e-12;
  }
  double ami_err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const int n = 2 + static_cast<int>(rng.below(7));
    std::vector<int> a, b;
    std::vector<long> sa, sb;
    const auto ka = 1 + rng.below(4), kb = 1 + rng.below(4);
    for (int j = 0; j < n; ++j) {
      a.push_back(static_cast<int>(rng.below(ka)));
      b.push_back(static_cast<int>(rng.below(kb)));
    }
    std::map<int, long> ma, mb;
    for (int v : a) ++ma[v];
    for (int v : b) ++mb[v];
    for (const auto& [key, cnt] : ma) sa.push_back(cnt);
    for (const auto& [key, cnt] : mb) sb.push_back(cnt);
    ami_err = std::max(ami_err, std::abs(metrics::expected_mutual_information(sa, sb) - oracle::emi_exhaustive(a, b)));
    if (ma.size() < 2 || mb.size() < 2) continue;
    const double e = oracle::emi_exhaustive(a, b);
    if (std::abs(std::max(oracle::entropy_of(a), oracle::entropy_of(b)) - e) < 1e-12) continue;
    metrics::Corpus c;
    for (int j = 0; j < n; ++j) {
      c.messages.push_back({a[static_cast<std::size_t>(j)]});
      c.phrases.push_back({b[static_cast<std::size_t>(j)]});
    }
    ami_err = std::max(ami_err, std::abs(metrics::ami(c) - oracle::ami_exhaustive(a, b)));
  }
  double ci_err = 0.0;
  for (int l = 1; l <= 5; ++l) ci_err = std::max(ci_err, std::abs(metrics::ci(oracle::bijective_corpus(rng, 1000, l)).score - 1.0));
  const auto good = oracle::constructed_corpus(3);
  const auto noise = oracle::random_object_corpus(rng, 1000, 50, 5);
  const double pg = metrics::posdis(good), bg = metrics::bosdis(good);
  const double pn = metrics::posdis(noise), bn = metrics::bosdis(noise);
  const bool ok = cbm_bad == 0 && ami_err <= 1e-9 && ci_err <= 1e-6 && std::abs(pg - 1) < 1e-12 &&
                  std::abs(bg - 1) < 1e-12 && pn < 0.1 && bn < 0.1;
  return {ok, "cbm mismatches " + std::to_string(cbm_bad) + "/200, ami err " + fmt("%.1e", ami_err) + ", ci err " +
                  fmt("%.1e", ci_err) + ", posdis " + fmt("%.3f", pg) + "/" + fmt("%.3f", pn) + ", bosdis " +
                  fmt("%.3f", bg) + "/" + fmt("%.3f", bn)};
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

Var probe(const Var& v, std::uint64_t seed) {
  return sum(mul(v, v.tape()->constant(random_matrix(v.rows(), v.cols(), seed))));
}

double fd_error(const std::function<Var(Tape&, ParamStore&)>& f, ParamStore& s) {
  return finite_diff_check<double>(f, s).max_rel_error;
}

Outcome c7() {
  std::map<std::string, double> err;
  Rng rng(707);
  {
    ParamStore s;
    Mlp mlp(s, "mlp", {4, 6, 3}, rng);
    const Matrix x = random_matrix(3, 4, 1);
    err["mlp"] = fd_error([&](Tape& t, ParamStore& p) { return probe(mlp(t, p, t.constant(x)), 2); }, s);
  }
  {
    ParamStore s;
    Lstm cell(s, "lstm", 3, 4, rng);
    const Matrix x = random_matrix(2, 3, 3);
    err["lstm"] = fd_error(
        [&](Tape& t, ParamStore& p) {
          auto st = cell.zero_state(t, 2);
          for (int k = 0; k < 4; ++k) st = cell.step(t, p, t.constant(x * (1.0 - 0.3 * k)), st);
          return add(probe(st.h, 4), probe(st.c, 5));
        },
        s);
  }
  {
    ParamStore s;
    s.add("x", random_matrix(4, 5, 6, -2, 2));
    s.add("y", random_matrix(4, 5, 7));
    const std::vector<int> gold{0, 4, 2, 2};
    Matrix labels = (random_matrix(4, 5, 8).array() > 0).cast<double>().matrix();
    err["ce"] = fd_error([&](Tape& t, ParamStore& p) { return softmax_cross_entropy(t.param(p, "x"), std::span<const int>(gold)); }, s);
    err["bce"] = fd_error([&](Tape& t, ParamStore& p) { return bce_with_logits(t.param(p, "x"), labels); }, s);
    err["mse"] = fd_error([](Tape& t, ParamStore& p) { return mse(t.param(p, "x"), t.param(p, "y")); }, s);
  }
  {
    // CB straight-through: dL/dz equals the slot sum of dL/dq at the quantized value.
    const Eigen::Index B = 3, d = 4, l = 3;
    const Matrix fwd = random_matrix(B, l * d, 9), W = random_matrix(l * d, 2, 10);
    auto down = [&](Tape& t, const Var& q) { return probe(tanh(matmul(q, t.constant(W))), 11); };
    ParamStore zs;
    zs.add("z", random_matrix(B, d, 12));
    Tape t;
    auto z = t.param(zs, "z");
    t.backward(down(t, straight_through_tiled(z, fwd, l)));
    ParamStore qs;
    qs.add("q", fwd);
    Tape tq;
    auto q = tq.param(qs, "q");
    tq.backward(down(tq, q));
    Matrix expect = Matrix::Zero(B, d);
    for (Eigen::Index k = 0; k < l; ++k) expect += tq.grad(q).middleCols(k * d, d);
    err["st_cb"] = std::max((t.grad(z) - expect).cwiseAbs().maxCoeff() / expect.cwiseAbs().maxCoeff(),
                            fd_error([&](Tape& tp, ParamStore& p) { return down(tp, tp.param(p, "q")); }, qs));
  }
  {
    // QT straight-through: rounding passes the output gradient to the sigmoid.
    const Matrix W = random_matrix(5, 2, 13);
    auto down = [&](Tape& t, const Var& q) { return probe(sigmoid(matmul(q, t.constant(W))), 14); };
    ParamStore s;
    s.add("x", random_matrix(3, 5, 15, -2, 2));
    Tape t;
    auto x = t.param(s, "x");
    auto p = sigmoid(x);
    const Matrix bits = channels::qt_round(p.value());
    t.backward(down(t, straight_through(p, bits)));
    ParamStore qs;
    qs.add("q", bits);
    Tape tq;
    auto q = tq.param(qs, "q");
    tq.backward(down(tq, q));
    const Matrix sg = p.value();
    const Matrix expect = tq.grad(q).cwiseProduct(sg.cwiseProduct((1.0 - sg.array()).matrix()));
    err["st_qt"] = std::max((t.grad(x) - expect).cwiseAbs().maxCoeff() / expect.cwiseAbs().maxCoeff(),
                            fd_error([&](Tape& tp, ParamStore& ps) { return down(tp, tp.param(ps, "q")); }, qs));
  }
  double ema_err = 0.0;
  {
    const double gamma = 0.99;
    Eigen::VectorXd usage = Eigen::VectorXd::LinSpaced(5, 0.0, 0.8);
    const Eigen::VectorXd n0 = usage;
    const std::vector<int> counts{0, 2, 3, 7, 10};
    for (int t = 0; t < 500; ++t) channels::cb_ema_update(usage, counts, 10, gamma);
    const double gt = std::pow(gamma, 500);
    for (Eigen::Index k = 0; k < 5; ++k)
      ema_err = std::max(ema_err, std::abs(usage(k) - (n0(k) * gt + counts[static_cast<std::size_t>(k)] / 10.0 * (1 - gt))));
  }
  double commit_err = 0.0;
  {
    const double beta2 = 0.6, B = 6;
    const Matrix zv = random_matrix(6, 4, 16), wv = random_matrix(6, 4, 17);
    ParamStore s;
    s.add("z", zv);
    s.add("w", wv);
    Tape t;
    auto z = t.param(s, "z"), w = t.param(s, "w");
    auto loss = channels::cb_commitment_loss(z, w, beta2);
    t.backward(loss);
    commit_err = std::max({std::abs(loss.scalar() - (1 + beta2) * (zv - wv).squaredNorm() / B),
                           (t.grad(w) - 2 * (wv - zv) / B).cwiseAbs().maxCoeff(),
                           (t.grad(z) - beta2 * 2 * (zv - wv) / B).cwiseAbs().maxCoeff()});
  }
  bool ok = ema_err <= 1e-12 && commit_err <= 1e-12;
  std::string detail;
  for (const auto& [name, e] : err) {
    ok = ok && e < 1e-4;
    detail += name + " " + fmt("%.1e", e) + ", ";
  }
  detail += "ema " + fmt("%.1e", ema_err) + ", commitment " + fmt("%.1e", commit_err);
  return {ok, detail};
}

std::vector<char> checkpoint_bytes(const Checkpoint& ck, const std::string& path) {
  ck.save(path);
  std::ifstream in(path, std::ios::binary);
  std::vector<char> b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::filesystem::remove(path);
  return b;
}

Outcome c8() {
  ExperimentConfig e;
  e.train = 1000;
  e.val = 200;
  e.test = 200;
  e.epochs = 3;
  e.seed = 8;
  e.data_seed = 8;
  const auto path = (std::filesystem::temp_directory_path() / "ctd_acceptance_det.ckpt").string();
  const auto a = run_regime(Regime::D, e), b = run_regime(Regime::D, e);
  const auto ba = checkpoint_bytes(a.checkpoint, path), bb = checkpoint_bytes(b.checkpoint, path);
  const auto ca = run_regime(Regime::CtD, e, &a.agents), cb = run_regime(Regime::CtD, e, &b.agents);
  const auto bca = checkpoint_bytes(ca.checkpoint, path), bcb = checkpoint_bytes(cb.checkpoint, path);
  const bool ok = !ba.empty() && ba == bb && bca == bcb;
  return {ok, "D " + std::to_string(ba.size()) + " bytes " + (ba == bb ? "identical" : "differ") + ", CtD " +
                  std::to_string(bca.size()) + " bytes " + (bca == bcb ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctd acceptance criteria"};
  std::vector<int> only;
  std::string out;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 8));
  app.add_option("--out", out, "Directory for reports and the merged table");
  CLI11_PARSE(app, argc, argv);
  std::set<int> want(only.begin(), only.end());
  if (want.empty()) want = {1, 2, 3, 4, 5, 6, 7, 8};
  if (!out.empty()) std::filesystem::create_directories(out);

  Runs runs(out);
  const std::map<int, std::function<Outcome()>> criteria{
      {1, [&] { return c1(runs); }}, {2, [&] { return c2(runs); }}, {3, [&] { return c3(runs); }},
      {4, [&] { return c4(runs); }}, {5, [&] { return c5(runs); }}, {6, c6},
      {7, c7},                       {8, c8}};
  int failed = 0;
  for (int id : want) {
    Outcome o;
    try {
      o = criteria.at(id)();
    } catch (const std::exception& ex) {
      o = {false, std::string("error: ") + ex.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %s %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  runs.write_table();
  return failed == 0 ? 0 : 1;
}
