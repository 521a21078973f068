#pragma once

// Parameterized layers on top of ops.hpp. A layer only remembers parameter
// names and sizes; values live in a ParamStore so that optimizers and
// checkpoints see one flat, ordered set of matrices.

#include "ctd/diffcore/ops.hpp"
#include "ctd/diffcore/rng.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace ctd {

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) in row-major draw order.
template <typename S = double>
MatrixX<S> init_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  MatrixX<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<S>(rng.uniform(-a, a));
  return m;
}

template <typename S>
class BasicDense {
 public:
  BasicDense() = default;
  BasicDense(BasicParamStore<S>& store, std::string prefix, Eigen::Index in, Eigen::Index out, Rng& rng)
      : w_(prefix + ".w"), b_(prefix + ".b"), in_(in), out_(out) {
    store.add(w_, init_uniform<S>(in, out, in, rng));
    store.add(b_, init_uniform<S>(1, out, in, rng));
  }

  BasicVar<S> operator()(BasicTape<S>& tape, BasicParamStore<S>& store, const BasicVar<S>& x) const {
    return matmul_add(x, tape.param(store, w_), tape.param(store, b_));
  }

  const std::string& weight_name() const { return w_; }
  const std::string& bias_name() const { return b_; }
  Eigen::Index in() const { return in_; }
  Eigen::Index out() const { return out_; }

 private:
  std::string w_, b_;
  Eigen::Index in_ = 0, out_ = 0;
};

// Stack of Dense layers with ReLU between them (none after the last).
template <typename S>
class BasicMlp {
 public:
  BasicMlp() = default;
  BasicMlp(BasicParamStore<S>& store, const std::string& prefix, const std::vector<Eigen::Index>& sizes, Rng& rng) {
    if (sizes.size() < 2) throw DimensionError("Mlp: need at least input and output sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
      layers_.emplace_back(store, prefix + "." + std::to_string(i), sizes[i], sizes[i + 1], rng);
  }

  BasicVar<S> operator()(BasicTape<S>& tape, BasicParamStore<S>& store, BasicVar<S> x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](tape, store, x);
      if (i + 1 < layers_.size()) x = relu(x);
    }
    return x;
  }

  Eigen::Index in() const { return layers_.front().in(); }
  Eigen::Index out() const { return layers_.back().out(); }

 private:
  std::vector<BasicDense<S>> layers_;
};

// Single-layer LSTM cell, gates stacked as [i | f | g | o]:
//   i = s(x Wi + h Ui + bi)   f = s(x Wf + h Uf + bf)
//   g = tanh(x Wg + h Ug + bg) o = s(x Wo + h Uo + bo)
//   c' = f * c + i * g         h' = o * tanh(c')
template <typename S>
class BasicLstm {
 public:
  struct State {
    BasicVar<S> h, c;
  };

  BasicLstm() = default;
  BasicLstm(BasicParamStore<S>& store, std::string prefix, Eigen::Index input, Eigen::Index hidden, Rng& rng)
      : wx_(prefix + ".wx"), wh_(prefix + ".wh"), b_(prefix + ".b"), input_(input), hidden_(hidden) {
    store.add(wx_, init_uniform<S>(input, 4 * hidden, hidden, rng));
    store.add(wh_, init_uniform<S>(hidden, 4 * hidden, hidden, rng));
    MatrixX<S> b = init_uniform<S>(1, 4 * hidden, hidden, rng);
    b.middleCols(hidden, hidden).setConstant(S(1));
    store.add(b_, std::move(b));
  }

  State step(BasicTape<S>& tape, BasicParamStore<S>& store, const BasicVar<S>& x, const State& prev) const {
    if (x.cols() != input_) throw DimensionError("lstm_step: input width does not match cell");
    if (prev.h.cols() != hidden_ || prev.c.cols() != hidden_ || prev.h.rows() != x.rows() ||
        prev.c.rows() != x.rows())
      throw DimensionError("lstm_step: state shape does not match cell");
    auto pre = add(matmul_add(x, tape.param(store, wx_), tape.param(store, b_)), matmul(prev.h, tape.param(store, wh_)));
    auto i = sigmoid(slice_cols(pre, 0, hidden_));
    auto f = sigmoid(slice_cols(pre, hidden_, hidden_));
    auto g = tanh(slice_cols(pre, 2 * hidden_, hidden_));
    auto o = sigmoid(slice_cols(pre, 3 * hidden_, hidden_));
    auto c = add(mul(f, prev.c), mul(i, g));
    auto h = mul(o, tanh(c));
    return {h, c};
  }

  State zero_state(BasicTape<S>& tape, Eigen::Index batch) const {
    return {tape.constant(MatrixX<S>::Zero(batch, hidden_)), tape.constant(MatrixX<S>::Zero(batch, hidden_))};
  }

  Eigen::Index input() const { return input_; }
  Eigen::Index hidden() const { return hidden_; }

 private:
  std::string wx_, wh_, b_;
  Eigen::Index input_ = 0, hidden_ = 0;
};

using Dense = BasicDense<double>;
using Mlp = BasicMlp<double>;
using Lstm = BasicLstm<double>;

}  // namespace ctd
