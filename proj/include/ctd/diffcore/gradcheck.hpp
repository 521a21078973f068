#pragma once

#include "ctd/diffcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace ctd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
};

// Compares tape gradients with central differences for every scalar of every
// parameter in `store`. `f` builds the scalar loss on the given tape and must
// be a deterministic function of the store's values.
//
// rel = |g_fd - g_tape| / max(1e-8, |g_fd| + |g_tape|)
template <typename S>
GradCheckResult finite_diff_check(const std::function<BasicVar<S>(BasicTape<S>&, BasicParamStore<S>&)>& f,
                                  BasicParamStore<S>& store, S eps = S(1e-5)) {
  typename BasicTape<S>::GradMap analytic;
  {
    BasicTape<S> tape;
    auto loss = f(tape, store);
    tape.backward(loss);
    analytic = tape.grads(store);
  }
  auto eval = [&]() {
    BasicTape<S> tape;
    const S v = f(tape, store).scalar();
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("finite_diff_check: non-finite objective");
    return v;
  };
  GradCheckResult out;
  for (auto& e : store.entries()) {
    auto it = analytic.find(e.name);
    for (Eigen::Index k = 0; k < e.value.size(); ++k) {
      S& x = e.value.data()[k];
      const S orig = x;
      x = orig + eps;
      const S fp = eval();
      x = orig - eps;
      const S fm = eval();
      x = orig;
      const S fd = (fp - fm) / (S(2) * eps);
      const S ga = it == analytic.end() ? S(0) : it->second.data()[k];
      const double rel = std::abs(static_cast<double>(fd - ga)) /
                         std::max(1e-8, std::abs(static_cast<double>(fd)) + std::abs(static_cast<double>(ga)));
      if (out.worst_index < 0 || rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_param = e.name;
        out.worst_index = k;
      }
    }
  }
  return out;
}

}  // namespace ctd
