#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ctd {

// Named trainable matrices for one agent component plus their Adam moment
// buffers. Insertion order is preserved so serialization is stable.
template <typename Scalar>
class BasicParamStore {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  struct Entry {
    std::string name;
    Matrix value;
    Matrix m1;
    Matrix m2;
  };

  Matrix& add(std::string_view name, Matrix init) {
    std::string key(name);
    if (index_.count(key)) throw std::invalid_argument("ParamStore: duplicate parameter '" + key + "'");
    index_.emplace(key, entries_.size());
    Entry e{key, std::move(init), {}, {}};
    e.m1 = Matrix::Zero(e.value.rows(), e.value.cols());
    e.m2 = Matrix::Zero(e.value.rows(), e.value.cols());
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  const Matrix& at(std::string_view name) const { return entry(name).value; }
  Matrix& at(std::string_view name) { return entry(name).value; }

  const Entry& entry(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter '" + std::string(name) + "'");
    return entries_[it->second];
  }
  Entry& entry(std::string_view name) {
    return const_cast<Entry&>(static_cast<const BasicParamStore&>(*this).entry(name));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

using ParamStore = BasicParamStore<double>;

}  // namespace ctd
