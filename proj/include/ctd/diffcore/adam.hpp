#pragma once

#include "ctd/diffcore/param_store.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace ctd {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam step over every parameter that has a gradient.
// Parameters without an entry in `grads` keep their value and moments.
template <typename S, typename GradMap>
void adam_step(BasicParamStore<S>& store, const GradMap& grads, const AdamConfig& cfg = {}) {
  for (const auto& [name, g] : grads) {
    const auto& e = store.entry(name);
    if (g.rows() != e.value.rows() || g.cols() != e.value.cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" + name + "'");
  }
  const std::int64_t t = store.step() + 1;
  store.set_step(t);
  const S bc1 = S(1) - std::pow(S(cfg.beta1), static_cast<S>(t));
  const S bc2 = S(1) - std::pow(S(cfg.beta2), static_cast<S>(t));
  for (const auto& [name, g] : grads) {
    auto& e = store.entry(name);
    e.m1 = S(cfg.beta1) * e.m1 + (S(1) - S(cfg.beta1)) * g;
    e.m2 = S(cfg.beta2) * e.m2 + (S(1) - S(cfg.beta2)) * g.cwiseAbs2();
    e.value.array() -= S(cfg.lr) * (e.m1.array() / bc1) / ((e.m2.array() / bc2).sqrt() + S(cfg.eps));
  }
}

}  // namespace ctd
