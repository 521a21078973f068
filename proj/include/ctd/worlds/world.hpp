#pragma once

// Synthetic worlds: five categorical attributes with ten values each.
// THING renders an object as five one-hot blocks; QRC renders the same
// tuple as a keyed pseudo-random bit grid with no per-attribute structure.

#include "ctd/diffcore/rng.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctd::worlds {

inline constexpr int kAttributes = 5;
inline constexpr int kValues = 10;
inline constexpr int kConcepts = kAttributes * kValues;
inline constexpr int kObjects = 100000;
inline constexpr int kSpecialTokens = 4;  // SOS, EOS, PAD, UNK
inline constexpr int kThingBlock = kSpecialTokens + kConcepts;  // 54
inline constexpr int kThingDim = kThingBlock * kAttributes;     // 270
inline constexpr int kQrcSide = 24;
inline constexpr int kQrcDim = kQrcSide * kQrcSide;  // 576

class WorldError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Attribute {
  std::string name;
  std::vector<std::string> values;
};

struct AttributeSchema {
  std::vector<Attribute> attributes;

  int concept_count() const;
  std::string concept_name(int concept_id) const;
  void validate() const;
};

const AttributeSchema& thing_schema();

// One feature-value pair. Global concept id = attribute * 10 + value.
struct Concept {
  std::uint8_t attribute = 0;
  std::uint8_t value = 0;

  int id() const { return attribute * kValues + value; }
  static Concept from_id(int id);
  friend bool operator==(const Concept&, const Concept&) = default;
  friend auto operator<=>(const Concept&, const Concept&) = default;
};

using Object = std::array<std::uint8_t, kAttributes>;

int object_code(const Object& o);  // base-10 digits, attribute 0 most significant
Object object_from_code(int code);

// Conjunction of concepts on distinct attributes, kept sorted by attribute.
class Phrase {
 public:
  Phrase() = default;
  explicit Phrase(std::vector<Concept> concepts);

  const std::vector<Concept>& concepts() const { return concepts_; }
  std::size_t length() const { return concepts_.size(); }
  bool satisfied_by(const Object& o) const;
  std::vector<int> concept_ids() const;
  std::string key() const;  // canonical text form, e.g. "3-17-45"

  friend bool operator==(const Phrase&, const Phrase&) = default;
  friend auto operator<=>(const Phrase&, const Phrase&) = default;

 private:
  std::vector<Concept> concepts_;
};

// All phrases of `length` concepts on distinct attributes: attribute subsets
// in lexicographic order, then value tuples in lexicographic order.
std::vector<Phrase> enumerate_phrases(int length);

enum class World { Thing, Qrc };

std::string to_string(World w);
World world_from_string(const std::string& s);

Eigen::RowVectorXd encode_thing(const Object& o);
Object decode_thing(const Eigen::RowVectorXd& v);
// Absolute position of the hot unit for attribute i taking value v.
inline int thing_position(int i, int v) { return kThingBlock * i + kSpecialTokens + kValues * i + v; }

Eigen::RowVectorXd encode_qrc(const Object& o, std::uint64_t world_seed);

int input_dim(World w);

// Rows of the returned matrix are encodings of `objects`, in order.
Eigen::MatrixXd encode_batch(World w, std::uint64_t world_seed, const std::vector<Object>& objects);

struct GameGeometry {
  int sender_targets = 20;
  int sender_distractors = 0;
  int receiver_targets = 1;
  int receiver_distractors = 20;

  int candidates() const { return receiver_targets + receiver_distractors; }
  friend bool operator==(const GameGeometry&, const GameGeometry&) = default;
};

struct GameSample {
  Phrase phrase;
  std::vector<Object> sender_targets;
  std::vector<Object> sender_distractors;
  std::vector<Object> receiver_targets;
  std::vector<Object> receiver_distractors;
  // Receiver candidate slot k shows candidate order[k] of the list
  // receiver_targets ++ receiver_distractors.
  std::vector<int> order;

  std::vector<Object> candidates() const;
  std::vector<std::uint8_t> labels() const;  // 1 for target slots
  int gold() const;                          // first target slot
};

Object sample_satisfier(const Phrase& p, Rng& rng);
Object sample_violator(const Phrase& p, Rng& rng);

GameSample build_sample(const Phrase& p, const GameGeometry& g, Rng& rng);

enum class SplitMode { SingleConcept, CompositePhrase };

std::string to_string(SplitMode m);
SplitMode split_mode_from_string(const std::string& s);

struct SplitConfig {
  World world = World::Thing;
  std::uint64_t world_seed = 0;
  SplitMode mode = SplitMode::SingleConcept;
  int phrase_length = 1;
  GameGeometry geometry;
  int train = 10000;
  int val = 1000;
  int test = 1000;
  // Composite-Phrase: share of phrases given to each pool.
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  SplitConfig config;
  std::vector<GameSample> train, val, test;
};

DatasetSplit build_split(const SplitConfig& cfg);

// Header hash over every field that determines the generated samples.
std::uint64_t config_hash(const SplitConfig& cfg);

void write_jsonl(const DatasetSplit& d, const std::string& path);
DatasetSplit read_jsonl(const std::string& path);

}  // namespace ctd::worlds
