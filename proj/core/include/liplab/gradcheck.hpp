// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "liplab/graph.hpp"
#include "liplab/rng.hpp"
#include "liplab/tensor.hpp"

namespace liplab {

template <typename T>
struct GradCheckResult {
  T max_rel_err = T(0);
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
};

// Compares the backpropagated gradient of a scalar-valued graph function
// against central finite differences (f(x+eps e_i) - f(x-eps e_i))/(2 eps).
//
// `build` must construct a deterministic scalar output from the input var
// (stochastic layers need fixed seeds). Relative error per coordinate is
// |a-n| / max(|a|+|n|, 1e-4); the floor turns the comparison into an
// absolute one near zero, where finite differences are pure rounding noise.
// With max_coords > 0, a seeded random subset of coordinates is probed,
// which keeps checks of large compositions tractable.
template <typename T>
GradCheckResult<T> grad_check(
    const std::function<Var<T>(Graph<T>&, Var<T>)>& build, const Tensor<T>& x,
    T eps = T(1e-5), std::size_t max_coords = 0, std::uint64_t coord_seed = 0) {
  Tensor<T> analytic;
  {
    Graph<T> g;
    Var<T> xv = g.param(x);
    Var<T> out = build(g, xv);
    if (g.value(out).numel() != 1) {
      throw std::invalid_argument("grad_check: function must be scalar-valued");
    }
    if (!std::isfinite(static_cast<double>(g.value(out)[0]))) {
      throw std::invalid_argument("grad_check: non-finite function value");
    }
    g.backward(out);
    analytic = g.grad(xv);
  }

  auto eval = [&](const Tensor<T>& probe) {
    Graph<T> g;
    Var<T> xv = g.constant(probe);
    return g.value(build(g, xv))[0];
  };

  std::vector<std::size_t> coords;
  const std::size_t n = x.numel();
  if (max_coords == 0 || max_coords >= n) {
    coords.resize(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
  } else {
    Rng rng(derive_seed(coord_seed, 0x9c));
    coords.reserve(max_coords);
    for (std::size_t i = 0; i < max_coords; ++i) coords.push_back(rng.below(n));
  }

  GradCheckResult<T> result;
  Tensor<T> probe = x;
  for (std::size_t i : coords) {
    const T keep = probe[i];
    probe[i] = keep + eps;
    const T fp = eval(probe);
    probe[i] = keep - eps;
    const T fm = eval(probe);
    probe[i] = keep;
    const T numeric = (fp - fm) / (T(2) * eps);
    const T a = analytic[i];
    const T denom = std::max(std::abs(a) + std::abs(numeric), T(1e-4));
    const T rel = std::abs(a - numeric) / denom;
    if (rel > result.max_rel_err) {
      result.max_rel_err = rel;
      result.worst_coord = i;
    }
  }
  result.coords_checked = coords.size();
  return result;
}

}  // namespace liplab
