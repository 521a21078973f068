#include "ctd/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace ctd::metrics {

namespace {

constexpr int kValuesPerAttribute = 10;
constexpr double kTiny = 1e-12;

template <typename Key>
std::vector<long> relabel(const std::vector<Key>& keys) {
  std::map<Key, long> ids;
  std::vector<long> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(ids.emplace(k, static_cast<long>(ids.size())).first->second);
  return out;
}

std::vector<long> cluster_sizes(const std::vector<long>& labels) {
  std::map<long, long> n;
  for (long l : labels) ++n[l];
  std::vector<long> out;
  for (const auto& [k, v] : n) out.push_back(v);
  return out;
}

int max_id(const std::vector<std::vector<int>>& rows) {
  int m = -1;
  for (const auto& r : rows)
    for (int v : r) m = std::max(m, v);
  return m;
}

// Per attribute: the phrase's value for it, or -1 when the phrase does not
// mention the attribute.
std::vector<std::vector<long>> attribute_columns(const Corpus& c) {
  const int attrs = max_id(c.phrases) / kValuesPerAttribute + 1;
  std::vector<std::vector<long>> cols(static_cast<std::size_t>(std::max(attrs, 0)),
                                      std::vector<long>(c.size(), -1));
  for (std::size_t i = 0; i < c.size(); ++i)
    for (int id : c.phrases[i]) cols[static_cast<std::size_t>(id / kValuesPerAttribute)][i] = id % kValuesPerAttribute;
  return cols;
}

// (I(x, best attr) - I(x, second attr)) / H(x), or nothing when H(x) = 0.
bool disentanglement_term(const std::vector<long>& x, const std::vector<std::vector<long>>& attrs, double& term) {
  const double h = entropy(x);
  if (h <= kTiny) return false;
  double i1 = 0, i2 = 0;
  for (const auto& a : attrs) {
    const double mi = mutual_information(x, a);
    if (mi > i1) {
      i2 = i1;
      i1 = mi;
    } else if (mi > i2) {
      i2 = mi;
    }
  }
  term = (i1 - i2) / h;
  return true;
}

}  // namespace

void Corpus::validate() const {
  if (messages.size() != phrases.size()) throw MetricsError("corpus: messages and phrases differ in count");
  for (const auto& m : messages)
    for (int w : m)
      if (w < 0) throw MetricsError("corpus: negative word id");
  for (const auto& p : phrases)
    for (int id : p)
      if (id < 0) throw MetricsError("corpus: negative concept id");
}

double entropy(const std::vector<long>& x) {
  if (x.empty()) return 0.0;
  const double n = static_cast<double>(x.size());
  double h = 0;
  for (long k : cluster_sizes(x)) {
    const double p = static_cast<double>(k) / n;
    h -= p * std::log(p);
  }
  return h;
}

double mutual_information(const std::vector<long>& x, const std::vector<long>& y) {
  if (x.size() != y.size()) throw MetricsError("mutual_information: lengths differ");
  if (x.empty()) return 0.0;
  std::map<long, long> nx, ny;
  std::map<std::pair<long, long>, long> nxy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ++nx[x[i]];
    ++ny[y[i]];
    ++nxy[{x[i], y[i]}];
  }
  const double n = static_cast<double>(x.size());
  double mi = 0;
  for (const auto& [k, c] : nxy) {
    const double cc = static_cast<double>(c);
    mi += cc / n * std::log(n * cc / (static_cast<double>(nx[k.first]) * static_cast<double>(ny[k.second])));
  }
  return std::max(0.0, mi);
}

double expected_mutual_information(const std::vector<long>& a, const std::vector<long>& b) {
  long N = 0;
  for (long v : a) N += v;
  long Nb = 0;
  for (long v : b) Nb += v;
  if (N != Nb) throw MetricsError("expected_mutual_information: marginals disagree");
  if (N == 0) return 0.0;
  // Equal cluster sizes contribute identically; sum over distinct sizes.
  std::map<long, long> ma, mb;
  for (long v : a) ++ma[v];
  for (long v : b) ++mb[v];
  const double n = static_cast<double>(N);
  const double lgN = std::lgamma(n + 1);
  double emi = 0;
  for (const auto& [ai, ca] : ma) {
    for (const auto& [bj, cb] : mb) {
      const double fa = static_cast<double>(ai), fb = static_cast<double>(bj);
      const double base = std::lgamma(fa + 1) + std::lgamma(fb + 1) + std::lgamma(n - fa + 1) + std::lgamma(n - fb + 1) - lgN;
      double s = 0;
      for (long nij = std::max(1L, ai + bj - N); nij <= std::min(ai, bj); ++nij) {
        const double fn = static_cast<double>(nij);
        const double logp = base - std::lgamma(fn + 1) - std::lgamma(fa - fn + 1) - std::lgamma(fb - fn + 1) -
                            std::lgamma(n - fa - fb + fn + 1);
        s += fn / n * std::log(n * fn / (fa * fb)) * std::exp(logp);
      }
      emi += static_cast<double>(ca) * static_cast<double>(cb) * s;
    }
  }
  return emi;
}

double ami(const Corpus& c) {
  c.validate();
  if (c.size() == 0) throw MetricsError("ami: empty corpus");
  const auto m = relabel(c.messages);
  const auto l = relabel(c.phrases);
  const auto sm = cluster_sizes(m), sl = cluster_sizes(l);
  if (sm.size() < 2 || sl.size() < 2) return 0.0;
  const double i = mutual_information(m, l);
  const double e = expected_mutual_information(sm, sl);
  const double denom = std::max(entropy(m), entropy(l)) - e;
  if (std::abs(denom) < kTiny) {
    // Only reachable when every permutation is maximally informative, i.e.
    // both sides are all-singleton; identical partitions score 1.
    return relabel(m) == relabel(l) ? 1.0 : 0.0;
  }
  return (i - e) / denom;
}

double posdis(const Corpus& c) {
  c.validate();
  if (c.size() == 0) return 0.0;
  const std::size_t L = c.messages.front().size();
  for (const auto& m : c.messages)
    if (m.size() != L) throw MetricsError("posdis: messages differ in length");
  const auto attrs = attribute_columns(c);
  double total = 0;
  int used = 0;
  for (std::size_t j = 0; j < L; ++j) {
    std::vector<long> x;
    x.reserve(c.size());
    for (const auto& m : c.messages) x.push_back(m[j]);
    double t;
    if (disentanglement_term(x, attrs, t)) {
      total += t;
      ++used;
    }
  }
  return used ? total / used : 0.0;
}

double bosdis(const Corpus& c) {
  c.validate();
  if (c.size() == 0) return 0.0;
  const auto attrs = attribute_columns(c);
  std::set<int> vocab;
  for (const auto& m : c.messages) vocab.insert(m.begin(), m.end());
  double total = 0;
  int used = 0;
  for (int w : vocab) {
    std::vector<long> n;
    n.reserve(c.size());
    for (const auto& m : c.messages) n.push_back(static_cast<long>(std::count(m.begin(), m.end(), w)));
    double t;
    if (disentanglement_term(n, attrs, t)) {
      total += t;
      ++used;
    }
  }
  return used ? total / used : 0.0;
}

Eigen::MatrixXd ibm1(const std::vector<std::vector<int>>& source, const std::vector<std::vector<int>>& target,
                     int source_vocab, int target_vocab, int max_iter, double tol, int* iterations, bool* converged) {
  if (source.size() != target.size()) throw MetricsError("ibm1: corpus sides differ in length");
  Eigen::MatrixXd t = Eigen::MatrixXd::Constant(target_vocab, source_vocab, 1.0 / std::max(1, target_vocab));
  Eigen::MatrixXd count(target_vocab, source_vocab);
  Eigen::VectorXd total(source_vocab);
  int it = 0;
  bool done = false;
  while (it < max_iter && !done) {
    count.setZero();
    total.setZero();
    for (std::size_t p = 0; p < source.size(); ++p) {
      const auto& src = source[p];
      if (src.empty()) continue;
      for (int w : target[p]) {
        double z = 0;
        for (int s : src) z += t(w, s);
        if (z <= 0) continue;
        for (int s : src) {
          const double frac = t(w, s) / z;
          count(w, s) += frac;
          total(s) += frac;
        }
      }
    }
    Eigen::MatrixXd next = t;
    for (int s = 0; s < source_vocab; ++s)
      if (total(s) > 0) next.col(s) = count.col(s) / total(s);
    const double change = (next - t).cwiseAbs().maxCoeff();
    t = std::move(next);
    ++it;
    done = change < tol;
  }
  if (iterations) *iterations = it;
  if (converged) *converged = done;
  return t;
}

CiResult ci(const Corpus& c, int max_iter, double tol) {
  c.validate();
  if (c.size() == 0) throw MetricsError("ci: empty corpus");
  const int W = max_id(c.messages) + 1, C = max_id(c.phrases) + 1;
  if (W <= 0 || C <= 0) return {};
  int it1 = 0, it2 = 0;
  bool ok1 = false, ok2 = false;
  // p_wc(w, c) = P(w | c); p_cw(c, w) = P(c | w).
  const Eigen::MatrixXd p_wc = ibm1(c.phrases, c.messages, C, W, max_iter, tol, &it1, &ok1);
  const Eigen::MatrixXd p_cw = ibm1(c.messages, c.phrases, W, C, max_iter, tol, &it2, &ok2);
  std::set<int> words, concepts;
  for (const auto& m : c.messages) words.insert(m.begin(), m.end());
  for (const auto& p : c.phrases) concepts.insert(p.begin(), p.end());
  if (words.empty() || concepts.empty()) return {0.0, std::max(it1, it2), ok1 && ok2};
  double sum = 0;
  for (int k : concepts) {
    int best = *words.begin();
    for (int w : words)
      if (p_cw(k, w) > p_cw(k, best)) best = w;
    sum += p_wc(best, k) * p_cw(k, best);
  }
  return {sum / static_cast<double>(concepts.size()), std::max(it1, it2), ok1 && ok2};
}

Assignment hungarian(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw MetricsError("hungarian: non-finite cost");
  const bool transpose = cost.rows() > cost.cols();
  const Eigen::MatrixXd a = transpose ? Eigen::MatrixXd(cost.transpose()) : cost;
  const auto n = static_cast<int>(a.rows()), m = static_cast<int>(a.cols());
  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(cost.rows()), -1);
  if (n == 0) return out;
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials (u, v), column owners p and augmenting-path links way; row and
  // column 0 are sentinels.
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int r = p[j] - 1, col = j - 1;
    if (transpose)
      out.row_to_col[static_cast<std::size_t>(col)] = r;
    else
      out.row_to_col[static_cast<std::size_t>(r)] = col;
    out.cost += a(r, col);
  }
  return out;
}

Eigen::MatrixXd cooccurrence(const Corpus& c, int vocab, int concepts) {
  Eigen::MatrixXd n = Eigen::MatrixXd::Zero(vocab, concepts);
  for (std::size_t i = 0; i < c.size(); ++i) {
    std::set<int> ws(c.messages[i].begin(), c.messages[i].end());
    std::set<int> cs(c.phrases[i].begin(), c.phrases[i].end());
    for (int w : ws)
      for (int k : cs) n(w, k) += 1;
  }
  return n;
}

MatchingResult cbm(const Corpus& c) {
  c.validate();
  MatchingResult r;
  const int W = max_id(c.messages) + 1, C = max_id(c.phrases) + 1;
  r.word_to_concept.assign(static_cast<std::size_t>(std::max(W, 0)), -1);
  if (W <= 0 || C <= 0) {
    for (const auto& p : c.phrases) r.total += static_cast<long>(p.size());
    r.paraphrase = r.total;
    return r;
  }
  const Eigen::MatrixXd n = cooccurrence(c, W, C);
  const Assignment a = hungarian(-n);
  std::vector<int> concept_word(static_cast<std::size_t>(C), -1);
  for (int w = 0; w < W; ++w) {
    const int k = a.row_to_col[static_cast<std::size_t>(w)];
    if (k >= 0 && n(w, k) > 0) {
      r.word_to_concept[static_cast<std::size_t>(w)] = k;
      concept_word[static_cast<std::size_t>(k)] = w;
    }
  }
  std::vector<int> best_word(static_cast<std::size_t>(C), -1);
  for (int k = 0; k < C; ++k) {
    Eigen::Index w;
    if (n.col(k).maxCoeff(&w) > 0) best_word[static_cast<std::size_t>(k)] = static_cast<int>(w);
  }
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& msg = c.messages[i];
    auto has = [&](int w) { return w >= 0 && std::find(msg.begin(), msg.end(), w) != msg.end(); };
    for (int k : c.phrases[i]) {
      ++r.total;
      const int w = concept_word[static_cast<std::size_t>(k)];
      const int b = best_word[static_cast<std::size_t>(k)];
      if (has(w))
        ++r.matched;
      else if (b != w && has(b))
        ++r.ambiguous;
      else
        ++r.paraphrase;
    }
  }
  r.score = r.total ? static_cast<double>(r.matched) / static_cast<double>(r.total) : 0.0;
  return r;
}

CorpusStats corpus_stats(const Corpus& c) {
  std::set<int> words;
  std::set<std::vector<int>> msgs;
  for (const auto& m : c.messages) {
    words.insert(m.begin(), m.end());
    msgs.insert(m);
  }
  return {static_cast<long>(words.size()), static_cast<long>(msgs.size())};
}

MetricsReport evaluate(const Corpus& c, double acc) {
  MetricsReport r;
  r.acc = acc;
  r.ami = ami(c);
  r.pos = posdis(c);
  r.bos = bosdis(c);
  const auto ci_res = ci(c);
  r.ci = ci_res.score;
  r.ci_converged = ci_res.converged;
  const auto m = cbm(c);
  r.cbm = m.score;
  r.ambiguous = m.ambiguous_fraction();
  r.paraphrase = m.paraphrase_fraction();
  const auto s = corpus_stats(c);
  r.words = s.unique_words;
  r.messages = s.unique_messages;
  std::set<int> concepts;
  for (const auto& p : c.phrases) concepts.insert(p.begin(), p.end());
  r.concepts = static_cast<int>(concepts.size());
  return r;
}

}  // namespace ctd::metrics
