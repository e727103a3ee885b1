// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
//
// CorrMSE and its component terms. The combined loss is
//   lambda * (1/n) sum_i (y_i - yhat_i)^2  -  pearson(y, yhat)
// with the Pearson term computed from centered sums. When yhat is
// (numerically) constant the correlation is undefined; the term is dropped
// for that sample and the event is flagged.
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "liplab/graph.hpp"
#include "liplab/tensor.hpp"

namespace liplab {

enum class LossKind { kMse, kCorr, kCorrMse };

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::kMse;
  if (s == "corr") return LossKind::kCorr;
  if (s == "corrmse") return LossKind::kCorrMse;
  throw std::invalid_argument("unknown loss kind: " + s);
}

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kMse: return "mse";
    case LossKind::kCorr: return "corr";
    default: return "corrmse";
  }
}

template <typename T>
T mse(std::span<const T> y, std::span<const T> yhat) {
  if (y.size() != yhat.size() || y.empty()) {
    throw std::invalid_argument("mse: length mismatch");
  }
  T acc = T(0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T d = y[i] - yhat[i];
    acc += d * d;
  }
  return acc / T(y.size());
}

template <typename T>
T pearson(std::span<const T> y, std::span<const T> yhat) {
  const std::size_t n = y.size();
  if (n != yhat.size() || n < 2) throw std::invalid_argument("pearson: need n >= 2");
  T my = T(0), mh = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    my += y[i];
    mh += yhat[i];
  }
  my /= T(n);
  mh /= T(n);
  T syy = T(0), shh = T(0), syh = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T a = y[i] - my, b = yhat[i] - mh;
    syy += a * a;
    shh += b * b;
    syh += a * b;
  }
  if (syy <= T(0) || shh <= T(0)) {
    throw std::invalid_argument("pearson: zero variance");
  }
  return syh / std::sqrt(syy * shh);
}

template <typename T>
struct CorrMseResult {
  T loss = T(0);
  std::vector<T> grad;   // d loss / d yhat
  bool degenerate = false;
};

template <typename T>
CorrMseResult<T> corrmse(std::span<const T> y, std::span<const T> yhat, T lambda,
                         LossKind kind = LossKind::kCorrMse) {
  const std::size_t n = y.size();
  if (n != yhat.size() || n < 2) throw std::invalid_argument("corrmse: need n >= 2");
  if (lambda < T(0)) throw std::invalid_argument("corrmse: lambda must be >= 0");

  CorrMseResult<T> r;
  r.grad.assign(n, T(0));

  const bool use_mse = kind != LossKind::kCorr;
  const bool use_corr = kind != LossKind::kMse;
  const T mse_w = kind == LossKind::kMse ? T(1) : lambda;

  if (use_mse) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = yhat[i] - y[i];
      acc += d * d;
      r.grad[i] = mse_w * T(2) * d / T(n);
    }
    r.loss += mse_w * acc / T(n);
  }
  if (use_corr) {
    T my = T(0), mh = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      my += y[i];
      mh += yhat[i];
    }
    my /= T(n);
    mh /= T(n);
    T syy = T(0), shh = T(0), syh = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T a = y[i] - my, b = yhat[i] - mh;
      syy += a * a;
      shh += b * b;
      syh += a * b;
    }
    if (syy <= T(0)) throw std::invalid_argument("corrmse: target has zero variance");
    if (shh < T(1e-12)) {
      // Correlation undefined for a constant prediction; fall back to the
      // MSE term alone and flag the sample.
      r.degenerate = true;
      return r;
    }
    const T denom = std::sqrt(syy * shh);
    const T rho = syh / denom;
    r.loss -= rho;
    for (std::size_t i = 0; i < n; ++i) {
      const T dr = (y[i] - my) / denom - rho * (yhat[i] - mh) / shh;
      r.grad[i] -= dr;
    }
  }
  return r;
}

// Batch loss node: yhat [N,D] against constant targets [N,D]; per-sample
// loss over the row, averaged over the batch. degenerate_count, when
// given, accumulates the number of constant-prediction rows encountered.
template <typename T>
Var<T> loss_node(Graph<T>& g, Var<T> yhat, const Tensor<T>& targets, LossKind kind,
                 T lambda, std::size_t* degenerate_count = nullptr) {
  const Tensor<T>& pv = g.value(yhat);
  if (pv.ndim() != 2 || !pv.same_shape(targets)) {
    throw std::invalid_argument("loss_node: prediction/target shape mismatch");
  }
  const std::size_t n = pv.dim(0), d = pv.dim(1);
  auto grad = std::make_shared<Tensor<T>>(pv.shape());
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    auto res = corrmse<T>({targets.data() + i * d, d}, {pv.data() + i * d, d}, lambda, kind);
    total += res.loss;
    if (res.degenerate && degenerate_count) ++*degenerate_count;
    for (std::size_t j = 0; j < d; ++j) (*grad)[i * d + j] = res.grad[j] / T(n);
  }
  total /= T(n);
  return g.custom(Tensor<T>({1}, {total}), {yhat}, [yhat, grad](Graph<T>& gg, Var<T> self) {
    if (!gg.needs_grad(yhat)) return;
    const T d0 = gg.grad(self)[0];
    Tensor<T>& dx = gg.grad(yhat);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += d0 * (*grad)[i];
  });
}

}  // namespace liplab
