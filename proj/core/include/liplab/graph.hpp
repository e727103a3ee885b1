// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense tensors. A Graph is a
// single-use tape: ops append nodes in topological order, backward() walks
// the tape in reverse. Parameter tensors live outside the graph and are
// copied in when bound, so a forward/backward pass never observes a
// concurrent optimizer update.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "liplab/parallel.hpp"
#include "liplab/rng.hpp"
#include "liplab/tensor.hpp"

namespace liplab {

enum class Mode { kTrain, kInfer };

template <typename T>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Running batch-norm moments; owned by the model, updated by train-mode
// forward passes.
template <typename T>
struct BnStats {
  Tensor<T> mean;
  Tensor<T> var;

  static BnStats init(std::size_t features) {
    BnStats s;
    s.mean = Tensor<T>::zeros({features});
    s.var = Tensor<T>::full({features}, T(1));
    return s;
  }
};

template <typename T>
class Graph {
 public:
  using Map =
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMap = Eigen::Map<
      const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false); }

  Var<T> param(Tensor<T> v) { return push(std::move(v), true); }

  const Tensor<T>& value(Var<T> v) const { return entries_[check(v)].value; }

  // Gradient accumulator, zero-initialized on first touch.
  Tensor<T>& grad(Var<T> v) {
    Entry& e = entries_[check(v)];
    if (e.grad.numel() == 0) e.grad = Tensor<T>::zeros(e.value.shape());
    return e.grad;
  }

  bool needs_grad(Var<T> v) const { return entries_[check(v)].needs_grad; }

  // Appends a custom node. `bw` receives the graph and the node's own var
  // and must add into the parents' grad buffers.
  Var<T> custom(Tensor<T> value, const std::vector<Var<T>>& parents,
                std::function<void(Graph&, Var<T>)> bw) {
    bool ng = false;
    for (Var<T> p : parents) ng = ng || entries_[check(p)].needs_grad;
    Var<T> v = push(std::move(value), ng);
    if (ng) entries_[v.id].backward = std::move(bw);
    return v;
  }

  void backward(Var<T> root) {
    Entry& r = entries_[check(root)];
    if (r.value.numel() != 1) {
      throw std::invalid_argument("backward: root must be scalar");
    }
    grad(root)[0] = T(1);
    for (int i = root.id; i >= 0; --i) {
      Entry& e = entries_[i];
      if (e.backward && e.grad.numel() != 0) e.backward(*this, Var<T>{i});
    }
  }

  std::size_t size() const { return entries_.size(); }

  // ---- ops ----

  // y = xW + b with x:[N,I], W:[I,O], b:[O].
  Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1 ||
        xv.dim(1) != wv.dim(0) || wv.dim(1) != bv.dim(0)) {
      throw std::invalid_argument("dense: shape mismatch " +
                                  Tensor<T>::shape_str(xv.shape()) + " x " +
                                  Tensor<T>::shape_str(wv.shape()));
    }
    const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
    Tensor<T> y({n, out});
    {
      ConstMap xm(xv.data(), n, in), wm(wv.data(), in, out);
      Map ym(y.data(), n, out);
      ym.noalias() = xm * wm;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < out; ++c) y[r * out + c] += bv[c];
    }
    return custom(std::move(y), {x, w, b}, [x, w, b, n, in, out](Graph& g, Var<T> self) {
      const Tensor<T>& dy = g.grad(self);
      ConstMap dym(dy.data(), n, out);
      if (g.needs_grad(x)) {
        ConstMap wm(g.value(w).data(), in, out);
        Map dxm(g.grad(x).data(), n, in);
        dxm.noalias() += dym * wm.transpose();
      }
      if (g.needs_grad(w)) {
        ConstMap xm(g.value(x).data(), n, in);
        Map dwm(g.grad(w).data(), in, out);
        dwm.noalias() += xm.transpose() * dym;
      }
      if (g.needs_grad(b)) {
        Tensor<T>& db = g.grad(b);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < out; ++c) db[c] += dy[r * out + c];
      }
    });
  }

  // Same-padded 3D cross-correlation. x:[N,C,H,W,Tt], k:[F,C,kh,kw,kt]
  // (all kernel dims odd), b:[F] -> [N,F,H,W,Tt]. Stride 1.
  Var<T> conv3d_same(Var<T> x, Var<T> k, Var<T> b) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& kv = value(k);
    const Tensor<T>& bv = value(b);
    if (xv.ndim() != 5 || kv.ndim() != 5 || bv.ndim() != 1) {
      throw std::invalid_argument("conv3d_same: rank mismatch");
    }
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3),
                      tt = xv.dim(4);
    const std::size_t f = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3), kt = kv.dim(4);
    if (kv.dim(1) != c) throw std::invalid_argument("conv3d_same: channel mismatch");
    if (bv.dim(0) != f) throw std::invalid_argument("conv3d_same: bias width mismatch");
    if (kh % 2 == 0 || kw % 2 == 0 || kt % 2 == 0) {
      throw std::invalid_argument("conv3d_same: kernel dims must be odd");
    }
    const std::size_t s = h * w * tt;        // spatial cells per channel
    const std::size_t j = c * kh * kw * kt;  // patch length

    Tensor<T> y({n, f, h, w, tt});
    parallel_for(n, [&](std::size_t n0, std::size_t n1) {
      std::vector<T> col(s * j);
      for (std::size_t ni = n0; ni < n1; ++ni) {
        im2col(xv.data() + ni * c * s, c, h, w, tt, kh, kw, kt, col.data());
        ConstMap km(kv.data(), f, j), cm(col.data(), s, j);
        Map ym(y.data() + ni * f * s, f, s);
        ym.noalias() = km * cm.transpose();
        for (std::size_t fi = 0; fi < f; ++fi) {
          T* row = y.data() + (ni * f + fi) * s;
          for (std::size_t si = 0; si < s; ++si) row[si] += bv[fi];
        }
      }
    });

    return custom(std::move(y), {x, k, b},
                  [x, k, b, n, c, h, w, tt, f, kh, kw, kt, s, j](Graph& g, Var<T> self) {
      const Tensor<T>& dy = g.grad(self);
      const bool want_x = g.needs_grad(x);
      const bool want_k = g.needs_grad(k);
      const bool want_b = g.needs_grad(b);
      const Tensor<T>& xv = g.value(x);
      const Tensor<T>& kv = g.value(k);
      if (want_x) g.grad(x);  // allocate outside the parallel region

      const std::size_t workers = std::min<std::size_t>(thread_budget(), n);
      const std::size_t chunk = (n + workers - 1) / workers;
      std::vector<Tensor<T>> dk_parts, db_parts;
      if (want_k) dk_parts.assign(workers, Tensor<T>::zeros(kv.shape()));
      if (want_b) db_parts.assign(workers, Tensor<T>::zeros({f}));

      parallel_for(n, [&](std::size_t n0, std::size_t n1) {
        const std::size_t wi = n0 / chunk;
        std::vector<T> col(s * j), dcol(want_x ? s * j : 0);
        for (std::size_t ni = n0; ni < n1; ++ni) {
          im2col(xv.data() + ni * c * s, c, h, w, tt, kh, kw, kt, col.data());
          ConstMap dym(dy.data() + ni * f * s, f, s);
          if (want_k) {
            ConstMap cm(col.data(), s, j);
            Map dkm(dk_parts[wi].data(), f, j);
            dkm.noalias() += dym * cm;
          }
          if (want_b) {
            T* dbp = db_parts[wi].data();
            for (std::size_t fi = 0; fi < f; ++fi) {
              const T* row = dy.data() + (ni * f + fi) * s;
              T acc = T(0);
              for (std::size_t si = 0; si < s; ++si) acc += row[si];
              dbp[fi] += acc;
            }
          }
          if (want_x) {
            ConstMap km(kv.data(), f, j);
            Map dcm(dcol.data(), s, j);
            dcm.noalias() = dym.transpose() * km;
            col2im(dcol.data(), c, h, w, tt, kh, kw, kt,
                   g.grad(x).data() + ni * c * s);
          }
        }
      });
      if (want_k) {
        Tensor<T>& dk = g.grad(k);
        for (std::size_t wi = 0; wi < workers; ++wi)
          for (std::size_t i = 0; i < dk.numel(); ++i) dk[i] += dk_parts[wi][i];
      }
      if (want_b) {
        Tensor<T>& db = g.grad(b);
        for (std::size_t wi = 0; wi < workers; ++wi)
          for (std::size_t i = 0; i < f; ++i) db[i] += db_parts[wi][i];
      }
    });
  }

  // Max pooling with window (wh,ww,wt); pooled dims must divide evenly.
  // Gradient routes to the first maximum in scan order.
  Var<T> maxpool3d(Var<T> x, std::size_t wh = 2, std::size_t ww = 2, std::size_t wt = 1) {
    const Tensor<T>& xv = value(x);
    if (xv.ndim() != 5) throw std::invalid_argument("maxpool3d: rank mismatch");
    if (wh == 0 || ww == 0 || wt == 0) throw std::invalid_argument("maxpool3d: zero window");
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3),
                      tt = xv.dim(4);
    if (h % wh || w % ww || tt % wt) {
      throw std::invalid_argument("maxpool3d: dims " + Tensor<T>::shape_str(xv.shape()) +
                                  " not divisible by window");
    }
    const std::size_t oh = h / wh, ow = w / ww, ot = tt / wt;
    Tensor<T> y({n, c, oh, ow, ot});
    auto argmax = std::make_shared<std::vector<std::size_t>>(y.numel());
    std::size_t oi = 0;
    for (std::size_t ni = 0; ni < n; ++ni)
      for (std::size_t ci = 0; ci < c; ++ci) {
        const T* base = xv.data() + (ni * c + ci) * h * w * tt;
        for (std::size_t yh = 0; yh < oh; ++yh)
          for (std::size_t yw = 0; yw < ow; ++yw)
            for (std::size_t yt = 0; yt < ot; ++yt, ++oi) {
              T best = -std::numeric_limits<T>::infinity();
              std::size_t best_off = 0;
              for (std::size_t ih = 0; ih < wh; ++ih)
                for (std::size_t iw = 0; iw < ww; ++iw)
                  for (std::size_t it = 0; it < wt; ++it) {
                    const std::size_t off =
                        ((yh * wh + ih) * w + (yw * ww + iw)) * tt + (yt * wt + it);
                    if (base[off] > best) {
                      best = base[off];
                      best_off = (ni * c + ci) * h * w * tt + off;
                    }
                  }
              y[oi] = best;
              (*argmax)[oi] = best_off;
            }
      }
    return custom(std::move(y), {x}, [x, argmax](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.numel(); ++i) dx[(*argmax)[i]] += dy[i];
    });
  }

  // Standard LSTM over the full sequence. x:[N,Tt,I], wx:[I,4U], wh:[U,4U],
  // b:[4U]; gate blocks ordered (input, forget, cell, output). Returns the
  // full hidden sequence [N,Tt,U]; initial h and c are zero.
  Var<T> lstm_seq(Var<T> x, Var<T> wx, Var<T> wh, Var<T> b) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wxv = value(wx);
    const Tensor<T>& whv = value(wh);
    const Tensor<T>& bv = value(b);
    if (xv.ndim() != 3 || wxv.ndim() != 2 || whv.ndim() != 2 || bv.ndim() != 1) {
      throw std::invalid_argument("lstm_seq: rank mismatch");
    }
    const std::size_t n = xv.dim(0), tt = xv.dim(1), in = xv.dim(2);
    const std::size_t u = whv.dim(0);
    if (wxv.dim(0) != in || wxv.dim(1) != 4 * u || whv.dim(1) != 4 * u ||
        bv.dim(0) != 4 * u) {
      throw std::invalid_argument("lstm_seq: parameter shape mismatch");
    }

    struct State {
      std::vector<Tensor<T>> gates;  // per step [N,4U], post-activation
      std::vector<Tensor<T>> cell;   // per step [N,U]
      std::vector<Tensor<T>> tanhc;  // per step [N,U]
      std::vector<Tensor<T>> hidden; // per step [N,U]
    };
    auto st = std::make_shared<State>();
    st->gates.reserve(tt);
    st->cell.reserve(tt);
    st->tanhc.reserve(tt);
    st->hidden.reserve(tt);

    Tensor<T> y({n, tt, u});
    Tensor<T> h_prev = Tensor<T>::zeros({n, u});
    Tensor<T> c_prev = Tensor<T>::zeros({n, u});
    for (std::size_t t = 0; t < tt; ++t) {
      Tensor<T> a({n, 4 * u});
      {
        Map am(a.data(), n, 4 * u);
        // x_t is a strided slice; gather it contiguously.
        Tensor<T> xt({n, in});
        for (std::size_t ni = 0; ni < n; ++ni)
          std::copy_n(xv.data() + (ni * tt + t) * in, in, xt.data() + ni * in);
        ConstMap xm(xt.data(), n, in), wxm(wxv.data(), in, 4 * u),
            hm(h_prev.data(), n, u), whm(whv.data(), u, 4 * u);
        am.noalias() = xm * wxm + hm * whm;
      }
      Tensor<T> c({n, u}), tc({n, u}), hh({n, u});
      for (std::size_t ni = 0; ni < n; ++ni) {
        T* ar = a.data() + ni * 4 * u;
        for (std::size_t ui = 0; ui < u; ++ui) {
          const T ai = sigmoid_scalar(ar[ui] + bv[ui]);
          const T af = sigmoid_scalar(ar[u + ui] + bv[u + ui]);
          const T ag = std::tanh(ar[2 * u + ui] + bv[2 * u + ui]);
          const T ao = sigmoid_scalar(ar[3 * u + ui] + bv[3 * u + ui]);
          ar[ui] = ai;
          ar[u + ui] = af;
          ar[2 * u + ui] = ag;
          ar[3 * u + ui] = ao;
          const T cv = af * c_prev[ni * u + ui] + ai * ag;
          const T tcv = std::tanh(cv);
          c[ni * u + ui] = cv;
          tc[ni * u + ui] = tcv;
          const T hv = ao * tcv;
          hh[ni * u + ui] = hv;
          y[(ni * tt + t) * u + ui] = hv;
        }
      }
      st->gates.push_back(std::move(a));
      st->cell.push_back(c);
      st->tanhc.push_back(std::move(tc));
      st->hidden.push_back(hh);
      h_prev = std::move(hh);
      c_prev = std::move(c);
    }

    return custom(std::move(y), {x, wx, wh, b},
                  [x, wx, wh, b, st, n, tt, in, u](Graph& g, Var<T> self) {
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& xv = g.value(x);
      const Tensor<T>& wxv = g.value(wx);
      const Tensor<T>& whv = g.value(wh);
      const bool want_x = g.needs_grad(x);

      Tensor<T> dh = Tensor<T>::zeros({n, u});
      Tensor<T> dc = Tensor<T>::zeros({n, u});
      Tensor<T> dwx_acc = Tensor<T>::zeros({in, 4 * u});
      Tensor<T> dwh_acc = Tensor<T>::zeros({u, 4 * u});
      Tensor<T> db_acc = Tensor<T>::zeros({4 * u});

      for (std::size_t ti = tt; ti-- > 0;) {
        const Tensor<T>& gate = st->gates[ti];
        const Tensor<T>& tc = st->tanhc[ti];
        Tensor<T> da({n, 4 * u});
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* gr = gate.data() + ni * 4 * u;
          T* dar = da.data() + ni * 4 * u;
          for (std::size_t ui = 0; ui < u; ++ui) {
            const T gi = gr[ui], gf = gr[u + ui], gg = gr[2 * u + ui], go = gr[3 * u + ui];
            const T tcv = tc[ni * u + ui];
            const T dhv = dh[ni * u + ui] + dy[(ni * tt + ti) * u + ui];
            T dcv = dc[ni * u + ui] + dhv * go * (T(1) - tcv * tcv);
            const T c_in = ti ? st->cell[ti - 1][ni * u + ui] : T(0);
            dar[ui] = dcv * gg * gi * (T(1) - gi);
            dar[u + ui] = dcv * c_in * gf * (T(1) - gf);
            dar[2 * u + ui] = dcv * gi * (T(1) - gg * gg);
            dar[3 * u + ui] = dhv * tcv * go * (T(1) - go);
            dc[ni * u + ui] = dcv * gf;
          }
        }
        // db += colsum(da)
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t q = 0; q < 4 * u; ++q) db_acc[q] += da[ni * 4 * u + q];

        Tensor<T> xt({n, in});
        for (std::size_t ni = 0; ni < n; ++ni)
          std::copy_n(xv.data() + (ni * tt + ti) * in, in, xt.data() + ni * in);
        ConstMap dam(da.data(), n, 4 * u), xm(xt.data(), n, in);
        {
          Map dwxm(dwx_acc.data(), in, 4 * u);
          dwxm.noalias() += xm.transpose() * dam;
        }
        if (ti > 0) {
          ConstMap hm(st->hidden[ti - 1].data(), n, u);
          Map dwhm(dwh_acc.data(), u, 4 * u);
          dwhm.noalias() += hm.transpose() * dam;
          ConstMap whm(whv.data(), u, 4 * u);
          Map dhm(dh.data(), n, u);
          dhm.noalias() = dam * whm.transpose();
        }
        if (want_x) {
          ConstMap wxm(wxv.data(), in, 4 * u);
          Tensor<T> dxt({n, in});
          Map dxm(dxt.data(), n, in);
          dxm.noalias() = dam * wxm.transpose();
          Tensor<T>& dx = g.grad(x);
          for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t i = 0; i < in; ++i)
              dx[(ni * tt + ti) * in + i] += dxt[ni * in + i];
        }
      }
      if (g.needs_grad(wx)) {
        Tensor<T>& d = g.grad(wx);
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += dwx_acc[i];
      }
      if (g.needs_grad(wh)) {
        Tensor<T>& d = g.grad(wh);
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += dwh_acc[i];
      }
      if (g.needs_grad(b)) {
        Tensor<T>& d = g.grad(b);
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += db_acc[i];
      }
    });
  }

  // Per-feature batch normalization over axis 1. Train mode normalizes
  // with biased batch moments (epsilon 1e-5) and updates the running
  // moments in place (momentum 0.99); inference mode uses the running
  // moments.
  Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BnStats<T>* running, Mode mode,
                   T eps = T(1e-5), T momentum = T(0.99)) {
    const Tensor<T>& xv = value(x);
    if (xv.ndim() < 2) throw std::invalid_argument("batchnorm: rank must be >= 2");
    const std::size_t n = xv.dim(0), fdim = xv.dim(1);
    std::size_t rest = 1;
    for (std::size_t i = 2; i < xv.ndim(); ++i) rest *= xv.dim(i);
    const std::size_t m = n * rest;  // reduce count per feature
    const Tensor<T>& gv = value(gamma);
    const Tensor<T>& bv = value(beta);
    if (gv.ndim() != 1 || gv.dim(0) != fdim || bv.ndim() != 1 || bv.dim(0) != fdim) {
      throw std::invalid_argument("batchnorm: gamma/beta width mismatch");
    }
    if (!running) throw std::invalid_argument("batchnorm: missing running stats");
    if (mode == Mode::kTrain && m < 2) {
      throw std::invalid_argument("batchnorm: batch of 1 in training mode");
    }

    auto mean = std::make_shared<Tensor<T>>(Tensor<T>::zeros({fdim}));
    auto inv_std = std::make_shared<Tensor<T>>(Tensor<T>::zeros({fdim}));
    if (mode == Mode::kTrain) {
      Tensor<T> var = Tensor<T>::zeros({fdim});
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t fi = 0; fi < fdim; ++fi) {
          const T* p = xv.data() + (ni * fdim + fi) * rest;
          T acc = T(0);
          for (std::size_t r = 0; r < rest; ++r) acc += p[r];
          (*mean)[fi] += acc;
        }
      for (std::size_t fi = 0; fi < fdim; ++fi) (*mean)[fi] /= T(m);
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t fi = 0; fi < fdim; ++fi) {
          const T* p = xv.data() + (ni * fdim + fi) * rest;
          const T mu = (*mean)[fi];
          T acc = T(0);
          for (std::size_t r = 0; r < rest; ++r) acc += (p[r] - mu) * (p[r] - mu);
          var[fi] += acc;
        }
      for (std::size_t fi = 0; fi < fdim; ++fi) {
        var[fi] /= T(m);
        (*inv_std)[fi] = T(1) / std::sqrt(var[fi] + eps);
        running->mean[fi] = momentum * running->mean[fi] + (T(1) - momentum) * (*mean)[fi];
        running->var[fi] = momentum * running->var[fi] + (T(1) - momentum) * var[fi];
      }
    } else {
      for (std::size_t fi = 0; fi < fdim; ++fi) {
        (*mean)[fi] = running->mean[fi];
        (*inv_std)[fi] = T(1) / std::sqrt(running->var[fi] + eps);
      }
    }

    Tensor<T> y(xv.shape());
    for (std::size_t ni = 0; ni < n; ++ni)
      for (std::size_t fi = 0; fi < fdim; ++fi) {
        const T* p = xv.data() + (ni * fdim + fi) * rest;
        T* q = y.data() + (ni * fdim + fi) * rest;
        const T mu = (*mean)[fi], is = (*inv_std)[fi], ga = gv[fi], be = bv[fi];
        for (std::size_t r = 0; r < rest; ++r) q[r] = ga * (p[r] - mu) * is + be;
      }

    const bool train = mode == Mode::kTrain;
    return custom(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, mean, inv_std, n, fdim, rest, m, train](Graph& g,
                                                                           Var<T> self) {
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& xv = g.value(x);
      const Tensor<T>& gv = g.value(gamma);
      Tensor<T> dgamma = Tensor<T>::zeros({fdim});
      Tensor<T> dbeta = Tensor<T>::zeros({fdim});
      Tensor<T> dxhat_sum = Tensor<T>::zeros({fdim});
      Tensor<T> dxhat_dot = Tensor<T>::zeros({fdim});  // sum(dxhat * xhat)
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t fi = 0; fi < fdim; ++fi) {
          const T* p = xv.data() + (ni * fdim + fi) * rest;
          const T* d = dy.data() + (ni * fdim + fi) * rest;
          const T mu = (*mean)[fi], is = (*inv_std)[fi], ga = gv[fi];
          for (std::size_t r = 0; r < rest; ++r) {
            const T xhat = (p[r] - mu) * is;
            dgamma[fi] += d[r] * xhat;
            dbeta[fi] += d[r];
            dxhat_sum[fi] += d[r] * ga;
            dxhat_dot[fi] += d[r] * ga * xhat;
          }
        }
      if (g.needs_grad(x)) {
        Tensor<T>& dx = g.grad(x);
        for (std::size_t ni = 0; ni < n; ++ni)
          for (std::size_t fi = 0; fi < fdim; ++fi) {
            const T* p = xv.data() + (ni * fdim + fi) * rest;
            const T* d = dy.data() + (ni * fdim + fi) * rest;
            T* o = dx.data() + (ni * fdim + fi) * rest;
            const T mu = (*mean)[fi], is = (*inv_std)[fi], ga = gv[fi];
            if (train) {
              for (std::size_t r = 0; r < rest; ++r) {
                const T xhat = (p[r] - mu) * is;
                o[r] += is * (d[r] * ga - dxhat_sum[fi] / T(m) -
                              xhat * dxhat_dot[fi] / T(m));
              }
            } else {
              for (std::size_t r = 0; r < rest; ++r) o[r] += d[r] * ga * is;
            }
          }
      }
      if (g.needs_grad(gamma)) {
        Tensor<T>& dg = g.grad(gamma);
        for (std::size_t fi = 0; fi < fdim; ++fi) dg[fi] += dgamma[fi];
      }
      if (g.needs_grad(beta)) {
        Tensor<T>& db = g.grad(beta);
        for (std::size_t fi = 0; fi < fdim; ++fi) db[fi] += dbeta[fi];
      }
    });
  }

  // Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
  // Identity in inference mode and for p=0.
  Var<T> dropout(Var<T> x, double p, Mode mode, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p outside [0,1)");
    const Tensor<T>& xv = value(x);
    if (mode == Mode::kInfer || p == 0.0) return identity(x);
    auto mask = std::make_shared<Tensor<T>>(xv.shape());
    Rng rng(seed);
    const T scale = T(1.0 / (1.0 - p));
    Tensor<T> y(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const T mv = rng.uniform() < p ? T(0) : scale;
      (*mask)[i] = mv;
      y[i] = xv[i] * mv;
    }
    return custom(std::move(y), {x}, [x, mask](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * (*mask)[i];
    });
  }

  // Additive i.i.d. N(0, sigma^2); identity in inference mode.
  Var<T> gaussian_noise(Var<T> x, double sigma, Mode mode, std::uint64_t seed) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian_noise: negative sigma");
    const Tensor<T>& xv = value(x);
    if (mode == Mode::kInfer || sigma == 0.0) return identity(x);
    Rng rng(seed);
    Tensor<T> y(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      y[i] = xv[i] + T(sigma * rng.gaussian());
    }
    return custom(std::move(y), {x}, [x](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
  }

  Var<T> leaky_relu(Var<T> x, T slope = T(0.01)) {
    const Tensor<T>& xv = value(x);
    Tensor<T> y(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i)
      y[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
    return custom(std::move(y), {x}, [x, slope](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& xv = g.value(x);
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.numel(); ++i)
        dx[i] += dy[i] * (xv[i] > T(0) ? T(1) : slope);
    });
  }

  Var<T> elu(Var<T> x, T alpha = T(1)) {
    const Tensor<T>& xv = value(x);
    Tensor<T> y(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i)
      y[i] = xv[i] > T(0) ? xv[i] : alpha * (std::exp(xv[i]) - T(1));
    return custom(std::move(y), {x}, [x, alpha](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& yv = g.value(self);
      const Tensor<T>& xv = g.value(x);
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.numel(); ++i)
        dx[i] += dy[i] * (xv[i] > T(0) ? T(1) : yv[i] + alpha);
    });
  }

  // Logistic sigmoid, clamped to the open interval (0,1) so downstream
  // contracts on strict bounds hold even after float rounding.
  Var<T> sigmoid(Var<T> x) {
    const Tensor<T>& xv = value(x);
    Tensor<T> y(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = sigmoid_scalar(xv[i]);
    return custom(std::move(y), {x}, [x](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      const Tensor<T>& yv = g.value(self);
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.numel(); ++i)
        dx[i] += dy[i] * yv[i] * (T(1) - yv[i]);
    });
  }

  Var<T> reshape(Var<T> x, std::vector<std::size_t> shape) {
    Tensor<T> y = value(x).reshaped(std::move(shape));
    return custom(std::move(y), {x}, [x](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
  }

  // [N,C,H,W,Tt] -> [N,Tt,C*H*W]; keeps temporal order so an LSTM can
  // consume the conv features time step by time step.
  Var<T> time_major(Var<T> x) {
    const Tensor<T>& xv = value(x);
    if (xv.ndim() != 5) throw std::invalid_argument("time_major: rank mismatch");
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3),
                      tt = xv.dim(4);
    const std::size_t f = c * h * w;
    Tensor<T> y({n, tt, f});
    for (std::size_t ni = 0; ni < n; ++ni)
      for (std::size_t fi = 0; fi < f; ++fi) {
        const T* src = xv.data() + (ni * f + fi) * tt;
        for (std::size_t t = 0; t < tt; ++t) y[(ni * tt + t) * f + fi] = src[t];
      }
    return custom(std::move(y), {x}, [x, n, f, tt](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad(x);
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t fi = 0; fi < f; ++fi) {
          T* dst = dx.data() + (ni * f + fi) * tt;
          for (std::size_t t = 0; t < tt; ++t) dst[t] += dy[(ni * tt + t) * f + fi];
        }
    });
  }

  // Elementwise product of two same-shape tensors.
  Var<T> mul(Var<T> a, Var<T> b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
    Tensor<T> y(av.shape());
    for (std::size_t i = 0; i < av.numel(); ++i) y[i] = av[i] * bv[i];
    return custom(std::move(y), {a, b}, [a, b](Graph& g, Var<T> self) {
      const Tensor<T>& dy = g.grad(self);
      if (g.needs_grad(a)) {
        const Tensor<T>& bv = g.value(b);
        Tensor<T>& da = g.grad(a);
        for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * bv[i];
      }
      if (g.needs_grad(b)) {
        const Tensor<T>& av = g.value(a);
        Tensor<T>& db = g.grad(b);
        for (std::size_t i = 0; i < dy.numel(); ++i) db[i] += dy[i] * av[i];
      }
    });
  }

  Var<T> sum(Var<T> x) {
    const Tensor<T>& xv = value(x);
    T acc = T(0);
    for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i];
    return custom(Tensor<T>({1}, {acc}), {x}, [x](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const T d = g.grad(self)[0];
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += d;
    });
  }

  // Scalar dot product with a fixed weight tensor; the standard probe for
  // finite-difference checks of non-scalar ops.
  Var<T> weighted_sum(Var<T> x, Tensor<T> weights) {
    const Tensor<T>& xv = value(x);
    if (!xv.same_shape(weights)) throw std::invalid_argument("weighted_sum: shape mismatch");
    auto wshared = std::make_shared<Tensor<T>>(std::move(weights));
    T acc = T(0);
    for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i] * (*wshared)[i];
    return custom(Tensor<T>({1}, {acc}), {x}, [x, wshared](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const T d = g.grad(self)[0];
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += d * (*wshared)[i];
    });
  }

  static T sigmoid_scalar(T x) {
    T y = T(1) / (T(1) + std::exp(-x));
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    const T lo = std::numeric_limits<T>::min();
    if (y >= T(1)) y = hi;
    if (y <= T(0)) y = lo;
    return y;
  }

 private:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Graph&, Var<T>)> backward;
  };

  Var<T> identity(Var<T> x) {
    Tensor<T> y = value(x);
    return custom(std::move(y), {x}, [x](Graph& g, Var<T> self) {
      if (!g.needs_grad(x)) return;
      const Tensor<T>& dy = g.grad(self);
      Tensor<T>& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
  }

  Var<T> push(Tensor<T> v, bool needs_grad) {
    Entry e;
    e.value = std::move(v);
    e.needs_grad = needs_grad;
    entries_.push_back(std::move(e));
    return Var<T>{static_cast<int>(entries_.size()) - 1};
  }

  int check(Var<T> v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= entries_.size()) {
      throw std::invalid_argument("Var does not belong to this graph");
    }
    return v.id;
  }

  static void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w,
                     std::size_t tt, std::size_t kh, std::size_t kw, std::size_t kt,
                     T* col) {
    const std::ptrdiff_t ph = (kh - 1) / 2, pw = (kw - 1) / 2, pt = (kt - 1) / 2;
    std::size_t idx = 0;
    for (std::size_t yh = 0; yh < h; ++yh)
      for (std::size_t yw = 0; yw < w; ++yw)
        for (std::size_t yt = 0; yt < tt; ++yt)
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ih = 0; ih < kh; ++ih) {
              const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(yh + ih) - ph;
              for (std::size_t iw = 0; iw < kw; ++iw) {
                const std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(yw + iw) - pw;
                for (std::size_t it = 0; it < kt; ++it, ++idx) {
                  const std::ptrdiff_t stp = static_cast<std::ptrdiff_t>(yt + it) - pt;
                  const bool in = sh >= 0 && sh < static_cast<std::ptrdiff_t>(h) &&
                                  sw >= 0 && sw < static_cast<std::ptrdiff_t>(w) &&
                                  stp >= 0 && stp < static_cast<std::ptrdiff_t>(tt);
                  col[idx] = in ? x[((ci * h + sh) * w + sw) * tt + stp] : T(0);
                }
              }
            }
  }

  static void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w,
                     std::size_t tt, std::size_t kh, std::size_t kw, std::size_t kt,
                     T* dx) {
    const std::ptrdiff_t ph = (kh - 1) / 2, pw = (kw - 1) / 2, pt = (kt - 1) / 2;
    std::size_t idx = 0;
    for (std::size_t yh = 0; yh < h; ++yh)
      for (std::size_t yw = 0; yw < w; ++yw)
        for (std::size_t yt = 0; yt < tt; ++yt)
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ih = 0; ih < kh; ++ih) {
              const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(yh + ih) - ph;
              for (std::size_t iw = 0; iw < kw; ++iw) {
                const std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(yw + iw) - pw;
                for (std::size_t it = 0; it < kt; ++it, ++idx) {
                  const std::ptrdiff_t stp = static_cast<std::ptrdiff_t>(yt + it) - pt;
                  if (sh >= 0 && sh < static_cast<std::ptrdiff_t>(h) && sw >= 0 &&
                      sw < static_cast<std::ptrdiff_t>(w) && stp >= 0 &&
                      stp < static_cast<std::ptrdiff_t>(tt)) {
                    dx[((ci * h + sh) * w + sw) * tt + stp] += col[idx];
                  }
                }
              }
            }
  }

  std::vector<Entry> entries_;
};

}  // namespace liplab
