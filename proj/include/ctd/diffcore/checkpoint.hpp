#pragma once

// Binary checkpoint container.
//
//   "CTD1" | u32 version | entries until EOF
//   entry: u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 values (row-major)
//
// All integers and floats are little-endian. Parameter stores are written as
// "<prefix><name>", "<prefix><name>.m1", "<prefix><name>.m2"; callers add
// bookkeeping entries (RNG state, epoch, losses) under "__"-prefixed names.

#include "ctd/diffcore/param_store.hpp"
#include "ctd/diffcore/rng.hpp"

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctd {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
  };

  void put(const std::string& name, const Eigen::MatrixXd& m) {
    Entry e{name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, {}};
    e.values.resize(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) e.values[k++] = m(r, c);
    insert(std::move(e));
  }

  void put_scalars(const std::string& name, const std::vector<double>& v) {
    insert(Entry{name, {static_cast<std::uint64_t>(v.size())}, v});
  }

  // 64-bit integers are stored as two exact 32-bit halves.
  void put_u64(const std::string& name, std::uint64_t v) {
    put_scalars(name, {static_cast<double>(v >> 32), static_cast<double>(v & 0xFFFFFFFFULL)});
  }

  void put_store(const std::string& prefix, const ParamStore& store) {
    for (const auto& e : store.entries()) {
      put(prefix + e.name, e.value);
      put(prefix + e.name + ".m1", e.m1);
      put(prefix + e.name + ".m2", e.m2);
    }
    put_scalars(prefix + "__adam_step", {static_cast<double>(store.step())});
  }

  void put_rng(const std::string& name, const Rng& rng) {
    const auto s = rng.state();
    put_scalars(name, {static_cast<double>(s.seed >> 32), static_cast<double>(s.seed & 0xFFFFFFFFULL),
                       static_cast<double>(s.draws >> 32), static_cast<double>(s.draws & 0xFFFFFFFFULL)});
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const Entry& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw CheckpointError("checkpoint: missing entry '" + name + "'");
    return entries_[it->second];
  }

  Eigen::MatrixXd matrix(const std::string& name) const {
    const auto& e = get(name);
    if (e.dims.size() != 2) throw CheckpointError("checkpoint: '" + name + "' is not rank 2");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(e.dims[0]), static_cast<Eigen::Index>(e.dims[1]));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = e.values[k++];
    return m;
  }

  const std::vector<double>& scalars(const std::string& name) const { return get(name).values; }

  std::uint64_t u64(const std::string& name) const {
    const auto& v = scalars(name);
    if (v.size() != 2) throw CheckpointError("checkpoint: '" + name + "' is not a u64 pair");
    return (static_cast<std::uint64_t>(v[0]) << 32) | static_cast<std::uint64_t>(v[1]);
  }

  Rng rng(const std::string& name) const {
    const auto& v = scalars(name);
    if (v.size() != 4) throw CheckpointError("checkpoint: '" + name + "' is not an RNG state");
    Rng::State s;
    s.seed = (static_cast<std::uint64_t>(v[0]) << 32) | static_cast<std::uint64_t>(v[1]);
    s.draws = (static_cast<std::uint64_t>(v[2]) << 32) | static_cast<std::uint64_t>(v[3]);
    return Rng::restore(s);
  }

  // Overwrites values and moments of every parameter already present in
  // `store`; shapes must agree.
  void load_store(const std::string& prefix, ParamStore& store) const {
    for (auto& e : store.entries()) {
      auto load = [&](const std::string& key, Eigen::MatrixXd& dst) {
        Eigen::MatrixXd m = matrix(key);
        if (m.rows() != dst.rows() || m.cols() != dst.cols())
          throw CheckpointError("checkpoint: shape mismatch for '" + key + "'");
        dst = std::move(m);
      };
      load(prefix + e.name, e.value);
      load(prefix + e.name + ".m1", e.m1);
      load(prefix + e.name + ".m2", e.m2);
    }
    store.set_step(static_cast<std::int64_t>(scalars(prefix + "__adam_step").at(0)));
  }

  const std::vector<Entry>& entries() const { return entries_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + path);
    out.write("CTD1", 4);
    write_u32(out, kVersion);
    for (const auto& e : entries_) {
      write_u32(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_u32(out, static_cast<std::uint32_t>(e.dims.size()));
      for (auto d : e.dims) out.write(reinterpret_cast<const char*>(&d), 8);
      out.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(8 * e.values.size()));
    }
    if (!out) throw CheckpointError("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "CTD1", 4) != 0)
      throw CheckpointError("checkpoint: bad magic in " + path);
    if (read_u32(in) != kVersion) throw CheckpointError("checkpoint: unsupported version in " + path);
    Checkpoint ck;
    for (;;) {
      std::uint32_t len = 0;
      if (!in.read(reinterpret_cast<char*>(&len), 4)) break;
      Entry e;
      e.name.resize(len);
      in.read(e.name.data(), len);
      const std::uint32_t rank = read_u32(in);
      e.dims.resize(rank);
      std::uint64_t n = 1;
      for (auto& d : e.dims) {
        in.read(reinterpret_cast<char*>(&d), 8);
        n *= d;
      }
      e.values.resize(n);
      in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(8 * n));
      if (!in) throw CheckpointError("checkpoint: truncated entry '" + e.name + "' in " + path);
      ck.insert(std::move(e));
    }
    return ck;
  }

 private:
  void insert(Entry e) {
    if (index_.count(e.name)) throw CheckpointError("checkpoint: duplicate entry '" + e.name + "'");
    index_.emplace(e.name, entries_.size());
    entries_.push_back(std::move(e));
  }

  static void write_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

  static std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw CheckpointError("checkpoint: truncated header");
    return v;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace ctd
