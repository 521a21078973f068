#include "ctd/worlds/world.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ctd::worlds {

using nlohmann::json;

int AttributeSchema::concept_count() const {
  int n = 0;
  for (const auto& a : attributes) n += static_cast<int>(a.values.size());
  return n;
}

std::string AttributeSchema::concept_name(int concept_id) const {
  const Concept c = Concept::from_id(concept_id);
  return attributes.at(c.attribute).values.at(c.value);
}

void AttributeSchema::validate() const {
  if (static_cast<int>(attributes.size()) != kAttributes) throw WorldError("schema: expected 5 attributes");
  std::vector<std::string> seen;
  for (const auto& a : attributes) {
    if (static_cast<int>(a.values.size()) != kValues) throw WorldError("schema: attribute " + a.name + " needs 10 values");
    seen.insert(seen.end(), a.values.begin(), a.values.end());
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) throw WorldError("schema: value names must be unique");
}

const AttributeSchema& thing_schema() {
  static const AttributeSchema schema{{
      {"shape", {"circle", "ellipse", "square", "rectangle", "triangle", "oval", "pentagon", "hexagon", "star", "heart"}},
      {"color", {"red", "blue", "green", "yellow", "white", "gray", "orange", "purple", "pink", "brown"}},
      {"size", {"petite", "tiny", "small", "medium", "large", "huge", "miniature", "gigantic", "massive", "enormous"}},
      {"age", {"new", "vintage", "antique", "modern", "classic", "retro", "contemporary", "historic", "preowned",
               "timeless"}},
      {"material", {"wood", "metal", "plastic", "glass", "fabric", "ceramic", "paper", "leather", "stone", "rubber"}},
  }};
  return schema;
}

Concept Concept::from_id(int id) {
  if (id < 0 || id >= kConcepts) throw WorldError("concept id out of range: " + std::to_string(id));
  return Concept{static_cast<std::uint8_t>(id / kValues), static_cast<std::uint8_t>(id % kValues)};
}

int object_code(const Object& o) {
  int code = 0;
  for (int i = 0; i < kAttributes; ++i) {
    if (o[i] >= kValues) throw WorldError("object value out of range");
    code = code * kValues + o[i];
  }
  return code;
}

Object object_from_code(int code) {
  if (code < 0 || code >= kObjects) throw WorldError("object code out of range: " + std::to_string(code));
  Object o{};
  for (int i = kAttributes - 1; i >= 0; --i) {
    o[i] = static_cast<std::uint8_t>(code % kValues);
    code /= kValues;
  }
  return o;
}

Phrase::Phrase(std::vector<Concept> concepts) : concepts_(std::move(concepts)) {
  if (concepts_.size() > static_cast<std::size_t>(kAttributes)) throw WorldError("phrase: too many concepts");
  std::sort(concepts_.begin(), concepts_.end());
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    if (concepts_[i].attribute >= kAttributes || concepts_[i].value >= kValues)
      throw WorldError("phrase: concept out of range");
    if (i > 0 && concepts_[i].attribute == concepts_[i - 1].attribute)
      throw WorldError("phrase: two concepts on one attribute");
  }
}

bool Phrase::satisfied_by(const Object& o) const {
  for (const auto& c : concepts_)
    if (o[c.attribute] != c.value) return false;
  return true;
}

std::vector<int> Phrase::concept_ids() const {
  std::vector<int> ids;
  for (const auto& c : concepts_) ids.push_back(c.id());
  return ids;
}

std::string Phrase::key() const {
  std::string s;
  for (const auto& c : concepts_) {
    if (!s.empty()) s += '-';
    s += std::to_string(c.id());
  }
  return s;
}

std::vector<Phrase> enumerate_phrases(int length) {
  if (length < 1 || length > kAttributes) throw WorldError("enumerate_phrases: length must be in 1..5");
  std::vector<Phrase> out;
  // Mask order is not lexicographic over attribute lists; collect and sort.
  std::vector<std::vector<int>> subsets;
  for (int mask = 0; mask < (1 << kAttributes); ++mask) {
    if (std::popcount(static_cast<unsigned>(mask)) != length) continue;
    std::vector<int> attrs;
    for (int i = 0; i < kAttributes; ++i)
      if (mask & (1 << i)) attrs.push_back(i);
    subsets.push_back(attrs);
  }
  std::sort(subsets.begin(), subsets.end());
  int tuples = 1;
  for (int i = 0; i < length; ++i) tuples *= kValues;
  for (const auto& attrs : subsets) {
    for (int t = 0; t < tuples; ++t) {
      std::vector<Concept> cs(static_cast<std::size_t>(length));
      int rest = t;
      for (int k = length - 1; k >= 0; --k) {
        cs[k] = Concept{static_cast<std::uint8_t>(attrs[k]), static_cast<std::uint8_t>(rest % kValues)};
        rest /= kValues;
      }
      out.emplace_back(std::move(cs));
    }
  }
  return out;
}

std::string to_string(World w) { return w == World::Thing ? "thing" : "qrc"; }

World world_from_string(const std::string& s) {
  if (s == "thing") return World::Thing;
  if (s == "qrc") return World::Qrc;
  throw WorldError("unknown world '" + s + "'");
}

Eigen::RowVectorXd encode_thing(const Object& o) {
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(kThingDim);
  for (int i = 0; i < kAttributes; ++i) {
    if (o[i] >= kValues) throw WorldError("encode_thing: value index out of range");
    v(thing_position(i, o[i])) = 1.0;
  }
  return v;
}

Object decode_thing(const Eigen::RowVectorXd& v) {
  if (v.size() != kThingDim) throw WorldError("decode_thing: wrong width");
  Object o{};
  for (int i = 0; i < kAttributes; ++i) {
    int hot = -1;
    for (int k = 0; k < kValues; ++k) {
      if (v(thing_position(i, k)) == 1.0) {
        if (hot >= 0) throw WorldError("decode_thing: block has two hot units");
        hot = k;
      }
    }
    if (hot < 0) throw WorldError("decode_thing: block has no hot unit");
    o[i] = static_cast<std::uint8_t>(hot);
  }
  return o;
}

Eigen::RowVectorXd encode_qrc(const Object& o, std::uint64_t world_seed) {
  const std::uint64_t key = splitmix64(world_seed ^ 0x51C0DE5EEDULL);
  const std::uint64_t base = splitmix64(key + static_cast<std::uint64_t>(object_code(o)));
  Eigen::RowVectorXd v(kQrcDim);
  for (int w = 0; w < kQrcDim / 64; ++w) {
    const std::uint64_t bits = splitmix64(base ^ splitmix64(static_cast<std::uint64_t>(w) + 1));
    for (int b = 0; b < 64; ++b) v(64 * w + b) = static_cast<double>((bits >> b) & 1ULL);
  }
  return v;
}

int input_dim(World w) { return w == World::Thing ? kThingDim : kQrcDim; }

Eigen::MatrixXd encode_batch(World w, std::uint64_t world_seed, const std::vector<Object>& objects) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(objects.size()), input_dim(w));
  for (std::size_t k = 0; k < objects.size(); ++k)
    m.row(static_cast<Eigen::Index>(k)) = w == World::Thing ? encode_thing(objects[k]) : encode_qrc(objects[k], world_seed);
  return m;
}

std::vector<Object> GameSample::candidates() const {
  std::vector<Object> pool = receiver_targets;
  pool.insert(pool.end(), receiver_distractors.begin(), receiver_distractors.end());
  std::vector<Object> out;
  out.reserve(order.size());
  for (int k : order) out.push_back(pool.at(static_cast<std::size_t>(k)));
  return out;
}

std::vector<std::uint8_t> GameSample::labels() const {
  std::vector<std::uint8_t> out;
  const int nt = static_cast<int>(receiver_targets.size());
  for (int k : order) out.push_back(k < nt ? 1 : 0);
  return out;
}

int GameSample::gold() const {
  const int nt = static_cast<int>(receiver_targets.size());
  for (std::size_t s = 0; s < order.size(); ++s)
    if (order[s] < nt) return static_cast<int>(s);
  return -1;
}

Object sample_satisfier(const Phrase& p, Rng& rng) {
  Object o{};
  for (int i = 0; i < kAttributes; ++i) o[i] = static_cast<std::uint8_t>(rng.below(kValues));
  for (const auto& c : p.concepts()) o[c.attribute] = c.value;
  return o;
}

Object sample_violator(const Phrase& p, Rng& rng) {
  if (p.length() == 0) throw WorldError("empty phrase has no violating objects");
  for (;;) {
    Object o{};
    for (int i = 0; i < kAttributes; ++i) o[i] = static_cast<std::uint8_t>(rng.below(kValues));
    if (!p.satisfied_by(o)) return o;
  }
}

GameSample build_sample(const Phrase& p, const GameGeometry& g, Rng& rng) {
  if (g.sender_targets < 0 || g.sender_distractors < 0 || g.receiver_targets < 0 || g.receiver_distractors < 0)
    throw WorldError("build_sample: negative count");
  if (g.sender_targets + g.sender_distractors == 0) throw WorldError("build_sample: sender sees nothing");
  if (g.candidates() == 0) throw WorldError("build_sample: receiver has no candidates");
  if (p.length() == 0 && (g.sender_distractors > 0 || g.receiver_distractors > 0))
    throw WorldError("build_sample: empty phrase cannot have distractors");
  GameSample s;
  s.phrase = p;
  for (int k = 0; k < g.sender_targets; ++k) s.sender_targets.push_back(sample_satisfier(p, rng));
  for (int k = 0; k < g.sender_distractors; ++k) s.sender_distractors.push_back(sample_violator(p, rng));
  for (int k = 0; k < g.receiver_targets; ++k) s.receiver_targets.push_back(sample_satisfier(p, rng));
  for (int k = 0; k < g.receiver_distractors; ++k) s.receiver_distractors.push_back(sample_violator(p, rng));
  s.order.resize(static_cast<std::size_t>(g.candidates()));
  std::iota(s.order.begin(), s.order.end(), 0);
  rng.shuffle(s.order);
  return s;
}

std::string to_string(SplitMode m) { return m == SplitMode::SingleConcept ? "single" : "composite"; }

SplitMode split_mode_from_string(const std::string& s) {
  if (s == "single") return SplitMode::SingleConcept;
  if (s == "composite") return SplitMode::CompositePhrase;
  throw WorldError("unknown split mode '" + s + "'");
}

namespace {

json config_to_json(const SplitConfig& c) {
  return json{{"world", to_string(c.world)},
              {"world_seed", c.world_seed},
              {"mode", to_string(c.mode)},
              {"phrase_length", c.phrase_length},
              {"geometry",
               {c.geometry.sender_targets, c.geometry.sender_distractors, c.geometry.receiver_targets,
                c.geometry.receiver_distractors}},
              {"sizes", {c.train, c.val, c.test}},
              {"fractions", {c.train_fraction, c.val_fraction}},
              {"seed", c.seed}};
}

SplitConfig config_from_json(const json& j) {
  SplitConfig c;
  c.world = world_from_string(j.at("world").get<std::string>());
  c.world_seed = j.at("world_seed").get<std::uint64_t>();
  c.mode = split_mode_from_string(j.at("mode").get<std::string>());
  c.phrase_length = j.at("phrase_length").get<int>();
  const auto& g = j.at("geometry");
  c.geometry = {g.at(0).get<int>(), g.at(1).get<int>(), g.at(2).get<int>(), g.at(3).get<int>()};
  const auto& s = j.at("sizes");
  c.train = s.at(0).get<int>();
  c.val = s.at(1).get<int>();
  c.test = s.at(2).get<int>();
  c.train_fraction = j.at("fractions").at(0).get<double>();
  c.val_fraction = j.at("fractions").at(1).get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<GameSample> generate(const std::vector<Phrase>& pool, int count, const GameGeometry& g, const Rng& base) {
  if (pool.empty()) throw WorldError("build_split: empty phrase pool");
  std::vector<GameSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng r = base.split(static_cast<std::uint64_t>(i));
    const Phrase& p = pool[static_cast<std::size_t>(r.below(pool.size()))];
    out.push_back(build_sample(p, g, r));
  }
  return out;
}

json objects_json(const std::vector<Object>& objs) {
  json a = json::array();
  for (const auto& o : objs) a.push_back(object_code(o));
  return a;
}

std::vector<Object> objects_from_json(const json& a) {
  std::vector<Object> out;
  for (const auto& v : a) out.push_back(object_from_code(v.get<int>()));
  return out;
}

}  // namespace

std::uint64_t config_hash(const SplitConfig& cfg) { return fnv1a(config_to_json(cfg).dump()); }

DatasetSplit build_split(const SplitConfig& cfg) {
  if (cfg.phrase_length < 1 || cfg.phrase_length > kAttributes) throw WorldError("build_split: phrase length must be in 1..5");
  if (cfg.train < 0 || cfg.val < 0 || cfg.test < 0) throw WorldError("build_split: negative split size");
  DatasetSplit d;
  d.config = cfg;
  const Rng root(cfg.seed);
  std::vector<Phrase> phrases = enumerate_phrases(cfg.phrase_length);
  if (cfg.mode == SplitMode::SingleConcept) {
    d.train = generate(phrases, cfg.train, cfg.geometry, root.split(1));
    d.val = generate(phrases, cfg.val, cfg.geometry, root.split(2));
    d.test = generate(phrases, cfg.test, cfg.geometry, root.split(3));
    return d;
  }
  const double tf = cfg.train_fraction, vf = cfg.val_fraction;
  if (tf <= 0 || vf <= 0 || tf + vf >= 1.0) throw WorldError("build_split: phrase fractions must be positive and sum below 1");
  Rng shuffler = root.split(0);
  shuffler.shuffle(phrases);
  const auto n = phrases.size();
  const auto ntrain = static_cast<std::size_t>(std::floor(tf * static_cast<double>(n)));
  const auto nval = static_cast<std::size_t>(std::floor(vf * static_cast<double>(n)));
  if (ntrain == 0 || nval == 0 || ntrain + nval >= n)
    throw WorldError("build_split: not enough phrases for disjoint train/val/test pools");
  const std::vector<Phrase> train_pool(phrases.begin(), phrases.begin() + static_cast<std::ptrdiff_t>(ntrain));
  const std::vector<Phrase> val_pool(phrases.begin() + static_cast<std::ptrdiff_t>(ntrain),
                                     phrases.begin() + static_cast<std::ptrdiff_t>(ntrain + nval));
  const std::vector<Phrase> test_pool(phrases.begin() + static_cast<std::ptrdiff_t>(ntrain + nval), phrases.end());
  d.train = generate(train_pool, cfg.train, cfg.geometry, root.split(1));
  d.val = generate(val_pool, cfg.val, cfg.geometry, root.split(2));
  d.test = generate(test_pool, cfg.test, cfg.geometry, root.split(3));
  return d;
}

void write_jsonl(const DatasetSplit& d, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset file " + path);
  json header = config_to_json(d.config);
  header["schema_hash"] = config_hash(d.config);
  header["format"] = "ctd-dataset-1";
  out << header.dump() << '\n';
  auto dump = [&](const char* split, const std::vector<GameSample>& v) {
    for (const auto& s : v) {
      json line{{"split", split},
                {"phrase", s.phrase.concept_ids()},
                {"st", objects_json(s.sender_targets)},
                {"sd", objects_json(s.sender_distractors)},
                {"rt", objects_json(s.receiver_targets)},
                {"rd", objects_json(s.receiver_distractors)},
                {"order", s.order}};
      out << line.dump() << '\n';
    }
  };
  dump("train", d.train);
  dump("val", d.val);
  dump("test", d.test);
  if (!out) throw std::runtime_error("write failed for dataset file " + path);
}

DatasetSplit read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  std::string line;
  if (!std::getline(in, line)) throw WorldError("dataset file is empty: " + path);
  const json header = json::parse(line);
  DatasetSplit d;
  d.config = config_from_json(header);
  if (header.at("schema_hash").get<std::uint64_t>() != config_hash(d.config))
    throw WorldError("dataset header hash mismatch in " + path);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    GameSample s;
    std::vector<Concept> cs;
    for (const auto& id : j.at("phrase")) cs.push_back(Concept::from_id(id.get<int>()));
    s.phrase = Phrase(std::move(cs));
    s.sender_targets = objects_from_json(j.at("st"));
    s.sender_distractors = objects_from_json(j.at("sd"));
    s.receiver_targets = objects_from_json(j.at("rt"));
    s.receiver_distractors = objects_from_json(j.at("rd"));
    s.order = j.at("order").get<std::vector<int>>();
    const auto split = j.at("split").get<std::string>();
    if (split == "train")
      d.train.push_back(std::move(s));
    else if (split == "val")
      d.val.push_back(std::move(s));
    else if (split == "test")
      d.test.push_back(std::move(s));
    else
      throw WorldError("unknown split '" + split + "' in " + path);
  }
  return d;
}

}  // namespace ctd::worlds
