#pragma once

// Reverse-mode gradient tape over dense Eigen matrices.
//
// Every recorded value is a 2-D matrix (vectors are 1 x n rows). A Var is a
// light handle (tape pointer + node id); ops are free functions in ops.hpp
// that read input values, compute the output, and push a node carrying a
// closure that scatters the output gradient back into its inputs.

#include <Eigen/Dense>

#include "ctd/diffcore/param_store.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ctd {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using RowVector = Eigen::RowVectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
class BasicTape;

template <typename Scalar>
class BasicVar {
 public:
  using Matrix = MatrixX<Scalar>;

  BasicVar() = default;
  BasicVar(BasicTape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const {
    if (rows() != 1 || cols() != 1) throw DimensionError("scalar(): value is not 1x1");
    return value()(0, 0);
  }
  bool requires_grad() const { return tape_->requires_grad(id_); }

  BasicTape<Scalar>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  BasicTape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class BasicTape {
 public:
  using Matrix = MatrixX<Scalar>;
  using Var = BasicVar<Scalar>;
  using ParamStore = BasicParamStore<Scalar>;
  // Receives the gradient of the node's output and pushes contributions into
  // the inputs through accumulate().
  using Backward = std::function<void(const Matrix& out_grad, BasicTape& tape)>;
  using GradMap = std::map<std::string, Matrix>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(Matrix value) {
    check_finite(value, "constant");
    nodes_.push_back(Node{std::move(value), {}, false, {}, {}, "constant", nullptr, {}});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  // Leaf bound to a named parameter. Repeated calls for the same
  // (store, name) return the same node so gradients accumulate in one place.
  Var param(ParamStore& store, std::string_view name) {
    const auto key = std::make_pair(static_cast<const void*>(&store), std::string(name));
    if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var(this, it->second);
    nodes_.push_back(Node{store.at(name), {}, true, {}, {}, "param", &store, std::string(name)});
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_.emplace(key, id);
    return Var(this, id);
  }

  Var record(Matrix value, std::vector<int> inputs, Backward backward, const char* op) {
    check_finite(value, op);
    bool needs = false;
    for (int in : inputs) {
      if (in < 0 || in >= static_cast<int>(nodes_.size()))
        throw std::logic_error(std::string("tape: input precedes nothing in ") + op);
      needs = needs || nodes_[in].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{},
                          std::move(inputs), op, nullptr, {}});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Matrix& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(root)/d(root) = 1 and runs the recorded closures in reverse.
  void backward(Var root) {
    if (root.tape() != this) throw std::logic_error("backward: var belongs to another tape");
    const Matrix& v = nodes_[root.id()].value;
    if (v.rows() != 1 || v.cols() != 1) throw DimensionError("backward: root must be a 1x1 scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id()].grad = Matrix::Ones(1, 1);
    for (int i = root.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(n.grad, *this);
      if (!n.grad.allFinite()) throw NumericError(std::string("non-finite gradient at ") + n.op);
    }
  }

  // Gradient of the last backward() root with respect to v; zeros if v was
  // unreachable.
  Matrix grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Parameter gradients for one store, keyed by parameter name. Parameters
  // that never entered the tape are absent.
  GradMap grads(const ParamStore& store) const {
    GradMap out;
    for (const auto& n : nodes_) {
      if (n.store != &store) continue;
      out.emplace(n.param_name, n.grad.size() == 0 ? Matrix::Zero(n.value.rows(), n.value.cols()) : n.grad);
    }
    return out;
  }

  // As grads(), but moves the gradients out of the tape.
  GradMap take_grads(const ParamStore& store) {
    GradMap out;
    for (auto& n : nodes_) {
      if (n.store != &store) continue;
      if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      out.emplace(n.param_name, std::move(n.grad));
    }
    return out;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    std::vector<int> inputs;
    const char* op = "";
    const ParamStore* store = nullptr;
    std::string param_name;
  };

  static void check_finite(const Matrix& m, const char* op) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
  }

  std::vector<Node> nodes_;
  std::map<std::pair<const void*, std::string>, int> param_nodes_;
};

using Tape = BasicTape<double>;
using Var = BasicVar<double>;

}  // namespace ctd
