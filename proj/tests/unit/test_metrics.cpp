#include <doctest.h>

#include "../support/oracles.hpp"
#include "ctd/metrics/metrics.hpp"

#include <cmath>

using namespace ctd;
using namespace ctd::metrics;

namespace {

std::vector<long> sizes_of(const std::vector<int>& x) {
  std::map<int, long> m;
  for (int v : x) ++m[v];
  std::vector<long> s;
  for (const auto& [k, n] : m) s.push_back(n);
  return s;
}

Corpus labels_corpus(const std::vector<int>& a, const std::vector<int>& b) {
  Corpus c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.messages.push_back({a[i]});
    c.phrases.push_back({b[i]});
  }
  return c;
}

}  // namespace

TEST_CASE("entropy and mutual information on hand examples") {
  CHECK(std::abs(entropy({0, 1, 0, 1}) - std::log(2.0)) < 1e-15);
  CHECK(entropy({3, 3, 3}) == 0.0);
  CHECK(std::abs(mutual_information({0, 1, 0, 1}, {5, 6, 5, 6}) - std::log(2.0)) < 1e-15);
  CHECK(std::abs(mutual_information({0, 0, 1, 1}, {0, 1, 0, 1})) < 1e-15);
  CHECK_THROWS_AS(mutual_information({0}, {0, 1}), MetricsError);
}

TEST_CASE("expected MI and AMI match exhaustive permutation averages") {
  Rng rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(7));
    std::vector<int> a, b;
    const auto ka = 1 + rng.below(4), kb = 1 + rng.below(4);
    for (int i = 0; i < n; ++i) {
      a.push_back(static_cast<int>(rng.below(ka)));
      b.push_back(static_cast<int>(rng.below(kb)));
    }
    const double e = oracle::emi_exhaustive(a, b);
    CHECK(std::abs(expected_mutual_information(sizes_of(a), sizes_of(b)) - e) < 1e-9);
    if (sizes_of(a).size() < 2 || sizes_of(b).size() < 2) continue;
    const double denom = std::max(oracle::entropy_of(a), oracle::entropy_of(b)) - e;
    if (std::abs(denom) < 1e-12) continue;
    CHECK(std::abs(ami(labels_corpus(a, b)) - oracle::ami_exhaustive(a, b)) < 1e-9);
  }
}

TEST_CASE("ami: identical partitions score 1 and constants score 0") {
  CHECK(std::abs(ami(labels_corpus({0, 0, 1, 1, 2}, {4, 4, 7, 7, 9})) - 1.0) < 1e-12);
  CHECK(ami(labels_corpus({0, 0, 0}, {1, 2, 3})) == 0.0);
  CHECK(std::abs(ami(labels_corpus({0, 1, 2}, {5, 6, 7})) - 1.0) < 1e-12);
}

TEST_CASE("hungarian matches brute force on small matrices") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(5)), m = 1 + static_cast<int>(rng.below(5));
    Eigen::MatrixXd cost(n, m);
    for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = static_cast<double>(rng.below(10));
    const auto a = hungarian(cost);
    // Brute force over injective maps of the smaller side.
    std::vector<int> cols(static_cast<std::size_t>(m));
    std::iota(cols.begin(), cols.end(), 0);
    double best = 1e18;
    const int k = std::min(n, m);
    do {
      if (n <= m) {
        double s = 0;
        for (int i = 0; i < n; ++i) s += cost(i, cols[static_cast<std::size_t>(i)]);
        best = std::min(best, s);
      } else {
        // Every column assigned to a distinct row: try row subsets via permutations of rows.
        std::vector<int> rows(static_cast<std::size_t>(n));
        std::iota(rows.begin(), rows.end(), 0);
        do {
          double s = 0;
          for (int j = 0; j < m; ++j) s += cost(rows[static_cast<std::size_t>(j)], j);
          best = std::min(best, s);
        } while (std::next_permutation(rows.begin(), rows.end()));
        break;
      }
    } while (std::next_permutation(cols.begin(), cols.end()));
    CHECK(std::abs(a.cost - best) < 1e-9);
    int assigned = 0;
    for (int c : a.row_to_col) assigned += c >= 0;
    CHECK(assigned == k);
  }
}

TEST_CASE("cbm equals exhaustive matching on 200 random small corpora") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int words = 1 + static_cast<int>(rng.below(7)), concepts = 1 + static_cast<int>(rng.below(7));
    const auto c = oracle::random_small_corpus(rng, words, concepts, 5 + static_cast<int>(rng.below(30)));
    const auto r = cbm(c);
    CHECK(std::abs(r.score - oracle::cbm_exhaustive(c)) < 1e-12);
    CHECK(r.matched + r.ambiguous + r.paraphrase == r.total);
  }
}

TEST_CASE("cbm: one-to-one corpus scores 1, synonyms and polysemy lower it") {
  Corpus c;
  c.messages = {{0}, {1}, {2}, {0, 1}};
  c.phrases = {{10}, {20}, {30}, {10, 20}};
  CHECK(cbm(c).score == 1.0);
  // Concept 10 is spelled by two words half the time each.
  Corpus syn;
  syn.messages = {{0}, {1}, {0}, {1}};
  syn.phrases = {{10}, {10}, {10}, {10}};
  const auto s = cbm(syn);
  CHECK(s.score == 0.5);
  CHECK(s.paraphrase == 2);
}

TEST_CASE("posdis and bosdis are 1 on constructed corpora and near 0 on random ones") {
  Rng rng(4);
  const auto good = oracle::constructed_corpus(3);
  CHECK(std::abs(posdis(good) - 1.0) < 1e-12);
  CHECK(std::abs(bosdis(good) - 1.0) < 1e-12);
  const auto noise = oracle::random_object_corpus(rng, 1000, 50, 5);
  CHECK(posdis(noise) < 0.1);
  CHECK(bosdis(noise) < 0.1);
  Corpus ragged;
  ragged.messages = {{1}, {1, 2}};
  ragged.phrases = {{0}, {1}};
  CHECK_THROWS_AS(posdis(ragged), MetricsError);
}

TEST_CASE("ci is 1 on bijective corpora") {
  Rng rng(5);
  for (int l = 1; l <= 3; ++l) {
    const auto c = oracle::bijective_corpus(rng, 400, l);
    const auto r = ci(c);
    CHECK(std::abs(r.score - 1.0) < 1e-6);
  }
}

TEST_CASE("ibm1 rows are distributions") {
  const std::vector<std::vector<int>> src{{0, 1}, {1, 2}, {0}}, tgt{{3, 4}, {4}, {3}};
  int it = 0;
  bool conv = false;
  const auto t = ibm1(src, tgt, 3, 5, 100, 1e-9, &it, &conv);
  CHECK(conv);
  CHECK(it > 0);
  for (Eigen::Index s = 0; s < 3; ++s) CHECK(std::abs(t.col(s).sum() - 1.0) < 1e-9);
}

TEST_CASE("evaluate bundles every metric") {
  Rng rng(6);
  const auto c = oracle::bijective_corpus(rng, 2000, 1);
  const auto r = evaluate(c, 0.75);
  CHECK(r.acc == 0.75);
  CHECK(r.words == 50);
  CHECK(r.concepts == 50);
  CHECK(r.ratio() == 1.0);
  CHECK(r.cbm == 1.0);
  CHECK(std::abs(r.ami - 1.0) < 1e-9);
  const auto st = corpus_stats(c);
  CHECK(st.unique_words == 50);
  Corpus bad;
  bad.messages = {{-1}};
  bad.phrases = {{0}};
  CHECK_THROWS_AS(bad.validate(), MetricsError);
}
