#pragma once

// Compositionality metrics over aligned (message, phrase) corpora.
// Words are integer ids; phrases are sorted concept ids where concept
// id / 10 is the attribute and id % 10 the value.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ctd::metrics {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Corpus {
  std::vector<std::vector<int>> messages;
  std::vector<std::vector<int>> phrases;

  std::size_t size() const { return messages.size(); }
  void validate() const;
};

// Natural-log entropy of a label sequence and mutual information of two.
double entropy(const std::vector<long>& x);
double mutual_information(const std::vector<long>& x, const std::vector<long>& y);

// Expected mutual information of two clusterings with the given cluster sizes
// under the hypergeometric (permutation) model.
double expected_mutual_information(const std::vector<long>& a, const std::vector<long>& b);

// Whole messages and whole phrases as cluster labels:
// (I - E[I]) / (max(H(M), H(L)) - E[I]); 0 when either side is constant.
double ami(const Corpus& c);

double posdis(const Corpus& c);
double bosdis(const Corpus& c);

struct CiResult {
  double score = 0.0;
  int iterations = 0;
  bool converged = false;
};

// IBM Model 1 translation tables. forward(w, c) = P(w | c) with phrases as
// the source side; the reverse direction swaps the roles.
Eigen::MatrixXd ibm1(const std::vector<std::vector<int>>& source, const std::vector<std::vector<int>>& target,
                     int source_vocab, int target_vocab, int max_iter, double tol, int* iterations = nullptr,
                     bool* converged = nullptr);

CiResult ci(const Corpus& c, int max_iter = 50, double tol = 1e-6);

struct Assignment {
  std::vector<int> row_to_col;  // -1 for unassigned rows
  double cost = 0.0;
};

// Minimum-cost assignment of min(n, m) pairs on an n x m cost matrix.
Assignment hungarian(const Eigen::MatrixXd& cost);

struct MatchingResult {
  std::vector<int> word_to_concept;  // -1 when unmatched
  long matched = 0;
  long ambiguous = 0;
  long paraphrase = 0;
  long total = 0;
  double score = 0.0;  // matched / total

  double ambiguous_fraction() const { return total ? static_cast<double>(ambiguous) / total : 0.0; }
  double paraphrase_fraction() const { return total ? static_cast<double>(paraphrase) / total : 0.0; }
};

// Word x concept co-occurrence counts (pairs in which both appear).
Eigen::MatrixXd cooccurrence(const Corpus& c, int vocab, int concepts);

MatchingResult cbm(const Corpus& c);

struct CorpusStats {
  long unique_words = 0;
  long unique_messages = 0;
};

CorpusStats corpus_stats(const Corpus& c);

struct MetricsReport {
  double acc = 0.0;
  double ami = 0.0;
  double pos = 0.0;
  double bos = 0.0;
  double ci = 0.0;
  double cbm = 0.0;
  long words = 0;
  long messages = 0;
  int concepts = 0;
  double ambiguous = 0.0;
  double paraphrase = 0.0;
  bool ci_converged = true;

  double ratio() const { return concepts ? static_cast<double>(words) / concepts : 0.0; }
};

// All metrics; `acc` is supplied by the caller, `concepts` is the number of
// distinct concepts in the corpus phrases.
MetricsReport evaluate(const Corpus& c, double acc);

}  // namespace ctd::metrics
