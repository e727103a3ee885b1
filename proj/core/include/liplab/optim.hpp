// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "liplab/tensor.hpp"

namespace liplab {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-tensor first/second moment accumulators plus the shared step counter.
template <typename T>
class AdamState {
 public:
  std::int64_t step_count() const { return t_; }
  void begin_step() { ++t_; }

  // Bias-corrected Adam update for one tensor. l2 > 0 adds the penalty
  // gradient 2*l2*w before the moment update.
  void update(const std::string& name, Tensor<T>& w, const Tensor<T>& grad,
              const AdamConfig& cfg, T l2 = T(0)) {
    if (!w.same_shape(grad)) {
      throw std::invalid_argument("adam: gradient shape mismatch for " + name);
    }
    auto [it, inserted] = moments_.try_emplace(
        name, std::make_pair(Tensor<T>::zeros(w.shape()), Tensor<T>::zeros(w.shape())));
    Tensor<T>& m = it->second.first;
    Tensor<T>& v = it->second.second;
    if (!m.same_shape(w)) throw std::invalid_argument("adam: state shape mismatch for " + name);

    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    const T mc = T(1) - T(std::pow(cfg.beta1, static_cast<double>(t_)));
    const T vc = T(1) - T(std::pow(cfg.beta2, static_cast<double>(t_)));
    const T lr = T(cfg.lr), eps = T(cfg.eps);
    for (std::size_t i = 0; i < w.numel(); ++i) {
      T gi = grad[i];
      if (!std::isfinite(static_cast<double>(gi))) {
        throw std::runtime_error("adam: non-finite gradient in " + name);
      }
      if (l2 > T(0)) gi += T(2) * l2 * w[i];
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const T mhat = m[i] / mc;
      const T vhat = v[i] / vc;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

 private:
  std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments_;
  std::int64_t t_ = 0;
};

// Reduce-on-plateau schedule: divide the learning rate by `factor` after
// `patience` consecutive epochs without strict improvement.
struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  double lr = 1e-4;
  int patience = 4;
  double factor = 5.0;
};

inline void plateau_update(PlateauState& s, double val_loss) {
  if (!std::isfinite(val_loss)) throw std::invalid_argument("plateau_update: non-finite loss");
  if (val_loss < s.best) {
    s.best = val_loss;
    s.since_improvement = 0;
    return;
  }
  if (++s.since_improvement >= s.patience) {
    s.lr /= s.factor;
    s.since_improvement = 0;
  }
}

}  // namespace liplab
