#include <doctest.h>

#include "ctd/worlds/world.hpp"

#include <cstdio>
#include <filesystem>
#include <set>
#include <unordered_set>

using namespace ctd;
using namespace ctd::worlds;

namespace {

Object random_object(Rng& rng) {
  Object o{};
  for (auto& v : o) v = static_cast<std::uint8_t>(rng.below(kValues));
  return o;
}

long binomial(int n, int k) {
  long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

TEST_CASE("schema has 5 attributes of 10 values") {
  const auto& s = thing_schema();
  CHECK(s.attributes.size() == 5);
  CHECK(s.concept_count() == 50);
  for (const auto& a : s.attributes) CHECK(a.values.size() == 10);
}

TEST_CASE("enumerate_phrases counts and order") {
  for (int l = 1; l <= 5; ++l) {
    const auto ps = enumerate_phrases(l);
    CHECK(static_cast<long>(ps.size()) == binomial(5, l) * static_cast<long>(std::pow(10, l)));
    std::set<std::string> keys;
    for (const auto& p : ps) {
      CHECK(p.length() == static_cast<std::size_t>(l));
      keys.insert(p.key());
    }
    CHECK(keys.size() == ps.size());
  }
  CHECK(enumerate_phrases(1).size() == 50);
  CHECK(enumerate_phrases(2).size() == 1000);
  CHECK(enumerate_phrases(5).size() == 100000);
  CHECK_THROWS_AS(enumerate_phrases(0), WorldError);
  CHECK_THROWS_AS(enumerate_phrases(6), WorldError);
  const auto two = enumerate_phrases(2);
  CHECK(two.front().key() == "0-10");
  CHECK(two.back().key() == "39-49");
}

TEST_CASE("phrases reject repeated attributes") {
  CHECK_THROWS_AS(Phrase({Concept{1, 2}, Concept{1, 3}}), WorldError);
  const Phrase p({Concept{3, 1}, Concept{0, 7}});
  CHECK(p.key() == "7-31");
}

TEST_CASE("encode_thing layout matches an independent oracle") {
  Rng rng(1);
  for (int n = 0; n < 200; ++n) {
    const Object o = random_object(rng);
    const auto v = encode_thing(o);
    CHECK(v.size() == 270);
    CHECK(v.sum() == 5.0);
    for (int i = 0; i < 5; ++i) {
      const int block = 54 * i;
      const int offset = 4 + 10 * i + o[i];
      CHECK(v(block + offset) == 1.0);
    }
    CHECK(decode_thing(v) == o);
  }
  const Object zero{0, 0, 0, 0, 0};
  const auto v = encode_thing(zero);
  for (int p : {4, 68, 132, 196, 260}) CHECK(v(p) == 1.0);
  CHECK_THROWS_AS(encode_thing(Object{0, 0, 10, 0, 0}), WorldError);
}

TEST_CASE("encode_thing is injective and distinct objects differ in at least two units") {
  std::unordered_set<std::string> seen;
  for (int code = 0; code < kObjects; code += 7) {
    const auto v = encode_thing(object_from_code(code));
    std::string key(reinterpret_cast<const char*>(v.data()), sizeof(double) * 270);
    CHECK(seen.insert(key).second);
  }
  const auto a = encode_thing(Object{1, 2, 3, 4, 5}), b = encode_thing(Object{1, 2, 3, 4, 6});
  CHECK((a - b).cwiseAbs().sum() == 2.0);
}

TEST_CASE("encode_qrc: deterministic, no collisions, one-attribute changes flip about half the bits") {
  CHECK(encode_qrc(Object{1, 2, 3, 4, 5}, 9) == encode_qrc(Object{1, 2, 3, 4, 5}, 9));
  CHECK(encode_qrc(Object{1, 2, 3, 4, 5}, 9) != encode_qrc(Object{1, 2, 3, 4, 5}, 10));
  std::unordered_set<std::string> grids;
  for (int code = 0; code < kObjects; ++code) {
    const auto g = encode_qrc(object_from_code(code), 0);
    std::string key(static_cast<std::size_t>(kQrcDim), '0');
    for (int k = 0; k < kQrcDim; ++k) key[static_cast<std::size_t>(k)] = g(k) > 0.5 ? '1' : '0';
    grids.insert(std::move(key));
  }
  CHECK(grids.size() == static_cast<std::size_t>(kObjects));
  Rng rng(2);
  int inside = 0;
  for (int n = 0; n < 1000; ++n) {
    Object a = random_object(rng), b = a;
    const int i = static_cast<int>(rng.below(5));
    b[i] = static_cast<std::uint8_t>((a[i] + 1 + rng.below(9)) % 10);
    const double h = (encode_qrc(a, 0) - encode_qrc(b, 0)).cwiseAbs().sum();
    inside += (h >= 200 && h <= 376);
  }
  CHECK(inside >= 999);
}

TEST_CASE("build_sample respects the phrase and the geometry") {
  Rng rng(3);
  const auto phrases = enumerate_phrases(2);
  for (int n = 0; n < 50; ++n) {
    const Phrase& p = phrases[rng.below(phrases.size())];
    const GameGeometry g{5, 3, 2, 7};
    const auto s = build_sample(p, g, rng);
    CHECK(s.sender_targets.size() == 5);
    CHECK(s.sender_distractors.size() == 3);
    CHECK(s.receiver_targets.size() == 2);
    CHECK(s.receiver_distractors.size() == 7);
    for (const auto& o : s.sender_targets) CHECK(p.satisfied_by(o));
    for (const auto& o : s.receiver_targets) CHECK(p.satisfied_by(o));
    for (const auto& o : s.sender_distractors) CHECK_FALSE(p.satisfied_by(o));
    for (const auto& o : s.receiver_distractors) CHECK_FALSE(p.satisfied_by(o));
    std::vector<int> sorted = s.order;
    std::sort(sorted.begin(), sorted.end());
    for (int k = 0; k < 9; ++k) CHECK(sorted[static_cast<std::size_t>(k)] == k);
    const auto labels = s.labels();
    CHECK(std::count(labels.begin(), labels.end(), 1) == 2);
    CHECK(labels[static_cast<std::size_t>(s.gold())] == 1);
    CHECK(p.satisfied_by(s.candidates()[static_cast<std::size_t>(s.gold())]));
  }
}

TEST_CASE("length-5 phrases have one satisfying object") {
  Rng rng(4);
  const Phrase p({Concept{0, 1}, Concept{1, 2}, Concept{2, 3}, Concept{3, 4}, Concept{4, 5}});
  const auto s = build_sample(p, GameGeometry{20, 0, 1, 20}, rng);
  for (const auto& o : s.sender_targets) CHECK(o == Object{1, 2, 3, 4, 5});
  CHECK(s.sender_distractors.empty());
}

TEST_CASE("single-concept targets share the concept and vary elsewhere") {
  Rng rng(5);
  const Phrase red({Concept{1, 3}});
  const auto s = build_sample(red, GameGeometry{20, 0, 1, 20}, rng);
  std::set<int> other;
  for (const auto& o : s.sender_targets) {
    CHECK(o[1] == 3);
    other.insert(o[0]);
  }
  CHECK(other.size() > 1);
}

TEST_CASE("composite splits are phrase-disjoint; single-concept splits share all concepts") {
  SplitConfig c;
  c.mode = SplitMode::CompositePhrase;
  c.phrase_length = 2;
  c.train = 2000;
  c.val = 300;
  c.test = 300;
  c.seed = 11;
  const auto d = build_split(c);
  std::set<std::string> tr, va, te;
  for (const auto& s : d.train) tr.insert(s.phrase.key());
  for (const auto& s : d.val) va.insert(s.phrase.key());
  for (const auto& s : d.test) te.insert(s.phrase.key());
  for (const auto& k : te) {
    CHECK(tr.count(k) == 0);
    CHECK(va.count(k) == 0);
  }
  for (const auto& k : va) CHECK(tr.count(k) == 0);

  SplitConfig sc;
  sc.train = 3000;
  sc.val = 1000;
  sc.test = 1000;
  const auto ds = build_split(sc);
  std::set<std::string> a, b;
  for (const auto& s : ds.train) a.insert(s.phrase.key());
  for (const auto& s : ds.test) b.insert(s.phrase.key());
  CHECK(a.size() == 50);
  CHECK(b.size() == 50);
}

TEST_CASE("split generation is reproducible and round-trips through JSON lines") {
  SplitConfig c;
  c.world = World::Qrc;
  c.world_seed = 77;
  c.mode = SplitMode::CompositePhrase;
  c.phrase_length = 3;
  c.train = 40;
  c.val = 10;
  c.test = 10;
  c.seed = 5;
  const auto d1 = build_split(c), d2 = build_split(c);
  CHECK(d1.train.front().sender_targets == d2.train.front().sender_targets);
  const auto path = (std::filesystem::temp_directory_path() / "ctd_split.jsonl").string();
  write_jsonl(d1, path);
  const auto back = read_jsonl(path);
  CHECK(config_hash(back.config) == config_hash(c));
  CHECK(back.config.world_seed == 77);
  REQUIRE(back.test.size() == d1.test.size());
  for (std::size_t i = 0; i < back.test.size(); ++i) {
    CHECK(back.test[i].phrase == d1.test[i].phrase);
    CHECK(back.test[i].receiver_distractors == d1.test[i].receiver_distractors);
    CHECK(back.test[i].order == d1.test[i].order);
  }
  // The header alone regenerates the file.
  const auto regen = build_split(back.config);
  CHECK(regen.train.back().receiver_targets == d1.train.back().receiver_targets);
  std::remove(path.c_str());
}

TEST_CASE("split preconditions") {
  SplitConfig c;
  c.mode = SplitMode::CompositePhrase;
  c.phrase_length = 1;
  c.train_fraction = 0.98;
  c.val_fraction = 0.019;
  CHECK_THROWS_AS(build_split(c), WorldError);
  SplitConfig bad;
  bad.phrase_length = 6;
  CHECK_THROWS_AS(build_split(bad), WorldError);
}
