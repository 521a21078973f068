#pragma once

// Differentiable ops on BasicVar<Scalar>. Each op validates shapes, computes
// its value with Eigen, and records a closure with the exact analytic
// vector-Jacobian product.

#include "ctd/diffcore/tape.hpp"

#include <Eigen/SparseCore>

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ctd {

namespace detail {

template <typename S>
void require_same_tape(const BasicVar<S>& a, const BasicVar<S>& b, const char* op) {
  if (a.tape() != b.tape()) throw std::logic_error(std::string(op) + ": vars live on different tapes");
}

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename S>
void require_same_shape(const BasicVar<S>& a, const BasicVar<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
}

// Rows of log-softmax, stabilised by the row max.
template <typename Derived>
auto log_softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  MatrixX<S> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    const S lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

// log(1 + exp(x)) without overflow.
template <typename S>
S softplus(S x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename S>
S sigmoid(S x) {
  if (x >= 0) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

template <typename Derived>
auto softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  return detail::log_softmax_rows(x).array().exp().matrix().eval();
}

// y = x W (+ b). x: B x n, w: n x m, b: 1 x m.
//
// A constant, mostly-zero x (one-hot object encodings) is multiplied in
// sparse form; the value and gradients are identical to the dense path.
template <typename S>
BasicVar<S> matmul(const BasicVar<S>& x, const BasicVar<S>& w) {
  detail::require_same_tape(x, w, "matmul");
  if (x.cols() != w.rows())
    throw DimensionError("matmul: inner dimensions disagree " + detail::shape_str(x.rows(), x.cols()) + " * " +
                         detail::shape_str(w.rows(), w.cols()));
  auto* tape = x.tape();
  const int xi = x.id(), wi = w.id();
  const auto& xv = x.value();
  if (!x.requires_grad() && xv.size() > 0 && (xv.array() != S(0)).count() * 5 < xv.size()) {
    // Work on transposes so every row of w (a column of w^T) is contiguous.
    auto rows = std::make_shared<std::vector<std::vector<std::pair<Eigen::Index, S>>>>(xv.rows());
    for (Eigen::Index c = 0; c < xv.cols(); ++c)
      for (Eigen::Index r = 0; r < xv.rows(); ++r)
        if (xv(r, c) != S(0)) (*rows)[r].emplace_back(c, xv(r, c));
    const MatrixX<S> wt = w.value().transpose();
    MatrixX<S> yt = MatrixX<S>::Zero(wt.rows(), xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r)
      for (const auto& [c, v] : (*rows)[r]) yt.col(r) += v * wt.col(c);
    const Eigen::Index n = w.rows();
    return tape->record(yt.transpose(), {xi, wi},
                        [rows, wi, n](const MatrixX<S>& g, BasicTape<S>& t) {
                          const MatrixX<S> gt = g.transpose();
                          MatrixX<S> gwt = MatrixX<S>::Zero(gt.rows(), n);
                          for (std::size_t r = 0; r < rows->size(); ++r)
                            for (const auto& [c, v] : (*rows)[r]) gwt.col(c) += v * gt.col(static_cast<Eigen::Index>(r));
                          t.accumulate(wi, gwt.transpose());
                        },
                        "matmul");
  }
  MatrixX<S> y = xv * w.value();
  return tape->record(std::move(y), {xi, wi},
                      [xi, wi](const MatrixX<S>& g, BasicTape<S>& t) {
                        if (t.requires_grad(xi)) t.accumulate(xi, g * t.value(wi).transpose());
                        if (t.requires_grad(wi)) t.accumulate(wi, t.value(xi).transpose() * g);
                      },
                      "matmul");
}

// Adds a 1 x m row to every row of a.
template <typename S>
BasicVar<S> add_row(const BasicVar<S>& a, const BasicVar<S>& row) {
  detail::require_same_tape(a, row, "add_row");
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row: bias " + detail::shape_str(row.rows(), row.cols()) + " does not fit " +
                         detail::shape_str(a.rows(), a.cols()));
  const int ai = a.id(), ri = row.id();
  MatrixX<S> y = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(y), {ai, ri},
                          [ai, ri](const MatrixX<S>& g, BasicTape<S>& t) {
                            t.accumulate(ai, g);
                            t.accumulate(ri, g.colwise().sum());
                          },
                          "add_row");
}

template <typename S>
BasicVar<S> matmul_add(const BasicVar<S>& x, const BasicVar<S>& w, const BasicVar<S>& b) {
  if (b.rows() != 1 || b.cols() != w.cols())
    throw DimensionError("matmul_add: bias must be 1x" + std::to_string(w.cols()));
  return add_row(matmul(x, w), b);
}

template <typename S>
BasicVar<S> add(const BasicVar<S>& a, const BasicVar<S>& b) {
  detail::require_same_tape(a, b, "add");
  detail::require_same_shape(a, b, "add");
  const int ai = a.id(), bi = b.id();
  return a.tape()->record(a.value() + b.value(), {ai, bi},
                          [ai, bi](const MatrixX<S>& g, BasicTape<S>& t) {
                            t.accumulate(ai, g);
                            t.accumulate(bi, g);
                          },
                          "add");
}

template <typename S>
BasicVar<S> sub(const BasicVar<S>& a, const BasicVar<S>& b) {
  detail::require_same_tape(a, b, "sub");
  detail::require_same_shape(a, b, "sub");
  const int ai = a.id(), bi = b.id();
  return a.tape()->record(a.value() - b.value(), {ai, bi},
                          [ai, bi](const MatrixX<S>& g, BasicTape<S>& t) {
                            t.accumulate(ai, g);
                            t.accumulate(bi, -g);
                          },
                          "sub");
}

// Element-wise product.
template <typename S>
BasicVar<S> mul(const BasicVar<S>& a, const BasicVar<S>& b) {
  detail::require_same_tape(a, b, "mul");
  detail::require_same_shape(a, b, "mul");
  const int ai = a.id(), bi = b.id();
  MatrixX<S> y = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(y), {ai, bi},
                          [ai, bi](const MatrixX<S>& g, BasicTape<S>& t) {
                            if (t.requires_grad(ai)) t.accumulate(ai, g.cwiseProduct(t.value(bi)));
                            if (t.requires_grad(bi)) t.accumulate(bi, g.cwiseProduct(t.value(ai)));
                          },
                          "mul");
}

template <typename S>
BasicVar<S> scale(const BasicVar<S>& a, S s) {
  const int ai = a.id();
  return a.tape()->record(a.value() * s, {ai},
                          [ai, s](const MatrixX<S>& g, BasicTape<S>& t) { t.accumulate(ai, g * s); }, "scale");
}

template <typename S>
BasicVar<S> relu(const BasicVar<S>& a) {
  const int ai = a.id();
  MatrixX<S> y = a.value().cwiseMax(S(0));
  return a.tape()->record(std::move(y), {ai},
                          [ai](const MatrixX<S>& g, BasicTape<S>& t) {
                            t.accumulate(ai, (t.value(ai).array() > S(0)).select(g, S(0)));
                          },
                          "relu");
}

template <typename S>
BasicVar<S> tanh(const BasicVar<S>& a) {
  const int ai = a.id();
  MatrixX<S> y = a.value().array().tanh().matrix();
  const int yi = static_cast<int>(a.tape()->size());
  return a.tape()->record(std::move(y), {ai},
                          [ai, yi](const MatrixX<S>& g, BasicTape<S>& t) {
                            const auto& yv = t.value(yi);
                            t.accumulate(ai, (g.array() * (S(1) - yv.array().square())).matrix());
                          },
                          "tanh");
}

template <typename S>
BasicVar<S> sigmoid(const BasicVar<S>& a) {
  const int ai = a.id();
  MatrixX<S> y = a.value().unaryExpr([](S v) { return detail::sigmoid(v); });
  const int yi = static_cast<int>(a.tape()->size());
  return a.tape()->record(std::move(y), {ai},
                          [ai, yi](const MatrixX<S>& g, BasicTape<S>& t) {
                            const auto& yv = t.value(yi);
                            t.accumulate(ai, (g.array() * yv.array() * (S(1) - yv.array())).matrix());
                          },
                          "sigmoid");
}

template <typename S>
BasicVar<S> concat_cols(std::span<const BasicVar<S>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p, "concat_cols");
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  MatrixX<S> y(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts[0].tape()->record(std::move(y), ids,
                                 [ids, widths](const MatrixX<S>& g, BasicTape<S>& t) {
                                   Eigen::Index o = 0;
                                   for (std::size_t k = 0; k < ids.size(); ++k) {
                                     t.accumulate(ids[k], g.middleCols(o, widths[k]));
                                     o += widths[k];
                                   }
                                 },
                                 "concat_cols");
}

template <typename S>
BasicVar<S> concat_cols(const BasicVar<S>& a, const BasicVar<S>& b) {
  const BasicVar<S> parts[] = {a, b};
  return concat_cols<S>(std::span<const BasicVar<S>>(parts));
}

template <typename S>
BasicVar<S> slice_cols(const BasicVar<S>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw DimensionError("slice_cols: range out of bounds");
  const int ai = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  MatrixX<S> y = a.value().middleCols(start, count);
  return a.tape()->record(std::move(y), {ai},
                          [ai, start, count, rows, cols](const MatrixX<S>& g, BasicTape<S>& t) {
                            MatrixX<S> full = MatrixX<S>::Zero(rows, cols);
                            full.middleCols(start, count) = g;
                            t.accumulate(ai, full);
                          },
                          "slice_cols");
}

// y = A x for a constant sparse A (row aggregation: means, weighted sums).
template <typename S>
BasicVar<S> left_multiply(const Eigen::SparseMatrix<S, Eigen::RowMajor>& A, const BasicVar<S>& x) {
  if (A.cols() != x.rows()) throw DimensionError("left_multiply: inner dimensions disagree");
  auto sa = std::make_shared<Eigen::SparseMatrix<S, Eigen::RowMajor>>(A);
  const int xi = x.id();
  MatrixX<S> y = (*sa) * x.value();
  return x.tape()->record(std::move(y), {xi},
                          [sa, xi](const MatrixX<S>& g, BasicTape<S>& t) {
                            MatrixX<S> gx = sa->transpose() * g;
                            t.accumulate(xi, gx);
                          },
                          "left_multiply");
}

// Each row repeated `times` times consecutively: (B x d) -> (B*times x d).
template <typename S>
BasicVar<S> repeat_rows(const BasicVar<S>& a, Eigen::Index times) {
  if (times < 1) throw DimensionError("repeat_rows: times must be >= 1");
  const int ai = a.id();
  const Eigen::Index rows = a.rows();
  MatrixX<S> y(rows * times, a.cols());
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index k = 0; k < times; ++k) y.row(r * times + k) = a.value().row(r);
  return a.tape()->record(std::move(y), {ai},
                          [ai, rows, times](const MatrixX<S>& g, BasicTape<S>& t) {
                            MatrixX<S> ga = MatrixX<S>::Zero(rows, g.cols());
                            for (Eigen::Index r = 0; r < rows; ++r)
                              for (Eigen::Index k = 0; k < times; ++k) ga.row(r) += g.row(r * times + k);
                            t.accumulate(ai, ga);
                          },
                          "repeat_rows");
}

// Rows of `table` at `ids`; gradient scatter-adds back into the table.
template <typename S>
BasicVar<S> gather_rows(const BasicVar<S>& table, std::vector<int> ids) {
  for (int id : ids)
    if (id < 0 || id >= table.rows()) throw DimensionError("gather_rows: index out of range");
  const int ti = table.id();
  const Eigen::Index rows = table.rows(), cols = table.cols();
  MatrixX<S> y(static_cast<Eigen::Index>(ids.size()), cols);
  for (std::size_t k = 0; k < ids.size(); ++k) y.row(static_cast<Eigen::Index>(k)) = table.value().row(ids[k]);
  return table.tape()->record(std::move(y), {ti},
                              [ti, ids = std::move(ids), rows, cols](const MatrixX<S>& g, BasicTape<S>& t) {
                                MatrixX<S> gt = MatrixX<S>::Zero(rows, cols);
                                for (std::size_t k = 0; k < ids.size(); ++k)
                                  gt.row(ids[k]) += g.row(static_cast<Eigen::Index>(k));
                                t.accumulate(ti, gt);
                              },
                              "gather_rows");
}

// scores(b, i) = z.row(b) . cands.row(b * n + i); z: B x d, cands: B*n x d.
template <typename S>
BasicVar<S> batched_dot(const BasicVar<S>& z, const BasicVar<S>& cands, Eigen::Index n) {
  detail::require_same_tape(z, cands, "batched_dot");
  if (z.cols() != cands.cols()) throw DimensionError("batched_dot: feature dimensions disagree");
  if (cands.rows() != z.rows() * n) throw DimensionError("batched_dot: candidate count does not match batch");
  const int zi = z.id(), ci = cands.id();
  const Eigen::Index B = z.rows();
  MatrixX<S> y(B, n);
  for (Eigen::Index b = 0; b < B; ++b)
    y.row(b) = (cands.value().middleRows(b * n, n) * z.value().row(b).transpose()).transpose();
  return z.tape()->record(std::move(y), {zi, ci},
                          [zi, ci, B, n](const MatrixX<S>& g, BasicTape<S>& t) {
                            const auto& zv = t.value(zi);
                            const auto& cv = t.value(ci);
                            if (t.requires_grad(zi)) {
                              MatrixX<S> gz(B, zv.cols());
                              for (Eigen::Index b = 0; b < B; ++b)
                                gz.row(b) = g.row(b) * cv.middleRows(b * n, n);
                              t.accumulate(zi, gz);
                            }
                            if (t.requires_grad(ci)) {
                              MatrixX<S> gc(B * n, cv.cols());
                              for (Eigen::Index b = 0; b < B; ++b)
                                gc.middleRows(b * n, n) = g.row(b).transpose() * zv.row(b);
                              t.accumulate(ci, gc);
                            }
                          },
                          "batched_dot");
}

// Value with no recorded dependence: sg[a].
template <typename S>
BasicVar<S> stop_gradient(const BasicVar<S>& a) {
  return a.tape()->constant(a.value());
}

// Forward value is `forward` (a discretisation of `input`); the backward pass
// treats the map as the identity.
template <typename S>
BasicVar<S> straight_through(const BasicVar<S>& input, MatrixX<S> forward) {
  if (forward.rows() != input.rows() || forward.cols() != input.cols())
    throw DimensionError("straight_through: forward value must match input shape");
  const int ii = input.id();
  return input.tape()->record(std::move(forward), {ii},
                              [ii](const MatrixX<S>& g, BasicTape<S>& t) { t.accumulate(ii, g); },
                              "straight_through");
}

// Straight-through for a message of `slots` words built from one latent:
// input B x d, forward B x (slots*d); every slot's gradient flows to input.
template <typename S>
BasicVar<S> straight_through_tiled(const BasicVar<S>& input, MatrixX<S> forward, Eigen::Index slots) {
  const Eigen::Index d = input.cols();
  if (forward.rows() != input.rows() || forward.cols() != d * slots)
    throw DimensionError("straight_through_tiled: forward must be B x (slots*d)");
  const int ii = input.id();
  return input.tape()->record(std::move(forward), {ii},
                              [ii, d, slots](const MatrixX<S>& g, BasicTape<S>& t) {
                                MatrixX<S> gi = g.middleCols(0, d);
                                for (Eigen::Index k = 1; k < slots; ++k) gi += g.middleCols(k * d, d);
                                t.accumulate(ii, gi);
                              },
                              "straight_through_tiled");
}

template <typename S>
BasicVar<S> softmax(const BasicVar<S>& a) {
  const int ai = a.id();
  MatrixX<S> y = softmax_rows(a.value());
  const int yi = static_cast<int>(a.tape()->size());
  return a.tape()->record(std::move(y), {ai},
                          [ai, yi](const MatrixX<S>& g, BasicTape<S>& t) {
                            const auto& p = t.value(yi);
                            MatrixX<S> ga(p.rows(), p.cols());
                            for (Eigen::Index r = 0; r < p.rows(); ++r) {
                              const S dot = g.row(r).dot(p.row(r));
                              ga.row(r) = p.row(r).array() * (g.row(r).array() - dot);
                            }
                            t.accumulate(ai, ga);
                          },
                          "softmax");
}

template <typename S>
BasicVar<S> log_softmax(const BasicVar<S>& a) {
  const int ai = a.id();
  MatrixX<S> y = detail::log_softmax_rows(a.value());
  const int yi = static_cast<int>(a.tape()->size());
  return a.tape()->record(std::move(y), {ai},
                          [ai, yi](const MatrixX<S>& g, BasicTape<S>& t) {
                            const MatrixX<S> p = t.value(yi).array().exp().matrix();
                            MatrixX<S> ga = g - (p.array().colwise() * g.rowwise().sum().array()).matrix();
                            t.accumulate(ai, ga);
                          },
                          "log_softmax");
}

template <typename S>
BasicVar<S> sum(const BasicVar<S>& a) {
  const int ai = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  MatrixX<S> y(1, 1);
  y(0, 0) = a.value().sum();
  return a.tape()->record(std::move(y), {ai},
                          [ai, r, c](const MatrixX<S>& g, BasicTape<S>& t) {
                            t.accumulate(ai, MatrixX<S>::Constant(r, c, g(0, 0)));
                          },
                          "sum");
}

template <typename S>
BasicVar<S> mean(const BasicVar<S>& a) {
  if (a.value().size() == 0) throw DimensionError("mean: empty input");
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

// Mean over rows of the squared L2 distance between matching rows.
template <typename S>
BasicVar<S> mean_row_sqdist(const BasicVar<S>& a, const BasicVar<S>& b) {
  detail::require_same_tape(a, b, "mean_row_sqdist");
  detail::require_same_shape(a, b, "mean_row_sqdist");
  if (a.rows() == 0) throw DimensionError("mean_row_sqdist: empty input");
  const int ai = a.id(), bi = b.id();
  const S inv = S(1) / static_cast<S>(a.rows());
  MatrixX<S> y(1, 1);
  y(0, 0) = (a.value() - b.value()).squaredNorm() * inv;
  return a.tape()->record(std::move(y), {ai, bi},
                          [ai, bi, inv](const MatrixX<S>& g, BasicTape<S>& t) {
                            const MatrixX<S> d = (t.value(ai) - t.value(bi)) * (S(2) * inv * g(0, 0));
                            t.accumulate(ai, d);
                            t.accumulate(bi, -d);
                          },
                          "mean_row_sqdist");
}

// Mean over the batch of -log softmax(logits)[target].
template <typename S>
BasicVar<S> softmax_cross_entropy(const BasicVar<S>& logits, std::span<const int> targets) {
  const Eigen::Index B = logits.rows(), n = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != B)
    throw DimensionError("softmax_cross_entropy: one target per row required");
  if (B == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  for (int t : targets)
    if (t < 0 || t >= n) throw std::out_of_range("softmax_cross_entropy: target index out of range");
  const MatrixX<S> logp = detail::log_softmax_rows(logits.value());
  S loss = 0;
  for (Eigen::Index b = 0; b < B; ++b) loss -= logp(b, targets[static_cast<std::size_t>(b)]);
  MatrixX<S> y(1, 1);
  y(0, 0) = loss / static_cast<S>(B);
  const int li = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape()->record(std::move(y), {li},
                               [li, logp, tg, B](const MatrixX<S>& g, BasicTape<S>& t) {
                                 MatrixX<S> gl = logp.array().exp().matrix();
                                 for (Eigen::Index b = 0; b < B; ++b) gl(b, tg[static_cast<std::size_t>(b)]) -= S(1);
                                 t.accumulate(li, gl * (g(0, 0) / static_cast<S>(B)));
                               },
                               "softmax_cross_entropy");
}

// Mean over all elements of -[y log s(x) + (1-y) log(1-s(x))].
template <typename S>
BasicVar<S> bce_with_logits(const BasicVar<S>& logits, const MatrixX<S>& labels) {
  if (labels.rows() != logits.rows() || labels.cols() != logits.cols())
    throw DimensionError("bce_with_logits: labels must match logits shape");
  if (logits.value().size() == 0) throw DimensionError("bce_with_logits: empty input");
  const auto& x = logits.value();
  const S N = static_cast<S>(x.size());
  S loss = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const S xi = x.data()[i], yi = labels.data()[i];
    // -[y log s(x) + (1-y) log(1-s(x))] = softplus(x) - y x
    loss += detail::softplus(xi) - yi * xi;
  }
  MatrixX<S> y(1, 1);
  y(0, 0) = loss / N;
  const int li = logits.id();
  return logits.tape()->record(std::move(y), {li},
                               [li, labels, N](const MatrixX<S>& g, BasicTape<S>& t) {
                                 const auto& xv = t.value(li);
                                 MatrixX<S> gl = xv.unaryExpr([](S v) { return detail::sigmoid(v); }) - labels;
                                 t.accumulate(li, gl * (g(0, 0) / N));
                               },
                               "bce_with_logits");
}

// Mean of squared element differences.
template <typename S>
BasicVar<S> mse(const BasicVar<S>& a, const BasicVar<S>& b) {
  detail::require_same_tape(a, b, "mse");
  detail::require_same_shape(a, b, "mse");
  if (a.value().size() == 0) throw DimensionError("mse: empty input");
  const int ai = a.id(), bi = b.id();
  const S N = static_cast<S>(a.value().size());
  MatrixX<S> y(1, 1);
  y(0, 0) = (a.value() - b.value()).squaredNorm() / N;
  return a.tape()->record(std::move(y), {ai, bi},
                          [ai, bi, N](const MatrixX<S>& g, BasicTape<S>& t) {
                            const MatrixX<S> d = (t.value(ai) - t.value(bi)) * (S(2) * g(0, 0) / N);
                            t.accumulate(ai, d);
                            t.accumulate(bi, -d);
                          },
                          "mse");
}

}  // namespace ctd
