#include <doctest.h>

#include <cmath>
#include <vector>

#include "liplab/gradcheck.hpp"
#include "liplab/graph.hpp"
#include "liplab/rng.hpp"
#include "test_util.hpp"

using namespace liplab;
using testutil::random_tensor;

namespace {

// Independent oracles, written against the op contracts rather than the
// implementations.

TensorD dense_oracle(const TensorD& x, const TensorD& w, const TensorD& b) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(1);
  TensorD y({n, out});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < out; ++c) {
      double acc = b[c];
      for (std::size_t k = 0; k < in; ++k) acc += x[r * in + k] * w[k * out + c];
      y[r * out + c] = acc;
    }
  return y;
}

TensorD conv3d_oracle(const TensorD& x, const TensorD& k, const TensorD& b) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), tt = x.dim(4);
  const std::size_t f = k.dim(0), kh = k.dim(2), kw = k.dim(3), kt = k.dim(4);
  const std::ptrdiff_t ph = (kh - 1) / 2, pw = (kw - 1) / 2, pt = (kt - 1) / 2;
  TensorD y({n, f, h, w, tt});
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t fi = 0; fi < f; ++fi)
      for (std::size_t yh = 0; yh < h; ++yh)
        for (std::size_t yw = 0; yw < w; ++yw)
          for (std::size_t yt = 0; yt < tt; ++yt) {
            double acc = b[fi];
            for (std::size_t ci = 0; ci < c; ++ci)
              for (std::size_t ih = 0; ih < kh; ++ih)
                for (std::size_t iw = 0; iw < kw; ++iw)
                  for (std::size_t it = 0; it < kt; ++it) {
                    const std::ptrdiff_t sh = std::ptrdiff_t(yh + ih) - ph;
                    const std::ptrdiff_t sw = std::ptrdiff_t(yw + iw) - pw;
                    const std::ptrdiff_t st = std::ptrdiff_t(yt + it) - pt;
                    if (sh < 0 || sh >= std::ptrdiff_t(h) || sw < 0 ||
                        sw >= std::ptrdiff_t(w) || st < 0 || st >= std::ptrdiff_t(tt)) {
                      continue;
                    }
                    acc += x.at({ni, ci, std::size_t(sh), std::size_t(sw), std::size_t(st)}) *
                           k.at({fi, ci, ih, iw, it});
                  }
            y.at({ni, fi, yh, yw, yt}) = acc;
          }
  return y;
}

TensorD maxpool_oracle(const TensorD& x, std::size_t wh, std::size_t ww, std::size_t wt) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), tt = x.dim(4);
  TensorD y({n, c, h / wh, w / ww, tt / wt});
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t yh = 0; yh < h / wh; ++yh)
        for (std::size_t yw = 0; yw < w / ww; ++yw)
          for (std::size_t yt = 0; yt < tt / wt; ++yt) {
            double best = -1e300;
            for (std::size_t a = 0; a < wh; ++a)
              for (std::size_t b2 = 0; b2 < ww; ++b2)
                for (std::size_t d = 0; d < wt; ++d) {
                  best = std::max(best,
                                  x.at({ni, ci, yh * wh + a, yw * ww + b2, yt * wt + d}));
                }
            y.at({ni, ci, yh, yw, yt}) = best;
          }
  return y;
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("dense identity and fixed example") {
  Graph<double> g;
  auto x = g.constant(TensorD({1, 2}, {1, 2}));
  auto w = g.constant(TensorD({2, 2}, {1, 0, 0, 1}));
  auto b = g.constant(TensorD({2}, {3, 3}));
  auto y = g.dense(x, w, b);
  CHECK(g.value(y)[0] == doctest::Approx(4.0));
  CHECK(g.value(y)[1] == doctest::Approx(5.0));

  auto b0 = g.constant(TensorD({2}, {0, 0}));
  auto y2 = g.dense(x, w, b0);
  CHECK(g.value(y2)[0] == doctest::Approx(1.0));
  CHECK(g.value(y2)[1] == doctest::Approx(2.0));
}

TEST_CASE("dense matches triple-loop oracle") {
  const TensorD x = random_tensor<double>({4, 7}, 11);
  const TensorD w = random_tensor<double>({7, 5}, 12);
  const TensorD b = random_tensor<double>({5}, 13);
  Graph<double> g;
  auto y = g.dense(g.constant(x), g.constant(w), g.constant(b));
  const TensorD ref = dense_oracle(x, w, b);
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    CHECK(g.value(y)[i] == doctest::Approx(ref[i]).epsilon(1e-6));
  }
}

TEST_CASE("dense rejects shape mismatch") {
  Graph<double> g;
  auto x = g.constant(TensorD({1, 3}, {1, 2, 3}));
  auto w = g.constant(TensorD({2, 2}, {1, 0, 0, 1}));
  auto b = g.constant(TensorD({2}, {0, 0}));
  CHECK_THROWS_AS((void)g.dense(x, w, b), std::invalid_argument);
}

TEST_CASE("conv3d zero kernel, ones oracle, and errors") {
  SUBCASE("zero kernel gives zero output") {
    Graph<double> g;
    auto x = g.constant(random_tensor<double>({1, 2, 4, 4, 3}, 21));
    auto k = g.constant(TensorD({3, 2, 3, 3, 3}));
    auto b = g.constant(TensorD({3}));
    auto y = g.conv3d_same(x, k, b);
    for (std::size_t i = 0; i < g.value(y).numel(); ++i) CHECK(g.value(y)[i] == 0.0);
  }
  SUBCASE("all-ones 3x3x3 on (1,1,4,4,2): interior 18, corner 8") {
    Graph<double> g;
    const TensorD x = TensorD::full({1, 1, 4, 4, 2}, 1.0);
    const TensorD k = TensorD::full({1, 1, 3, 3, 3}, 1.0);
    const TensorD b({1});
    auto y = g.conv3d_same(g.constant(x), g.constant(k), g.constant(b));
    CHECK(g.value(y).at({0, 0, 1, 1, 0}) == doctest::Approx(18.0));
    CHECK(g.value(y).at({0, 0, 0, 0, 0}) == doctest::Approx(8.0));
    const TensorD ref = conv3d_oracle(x, k, b);
    for (std::size_t i = 0; i < ref.numel(); ++i) {
      CHECK(g.value(y)[i] == doctest::Approx(ref[i]));
    }
  }
  SUBCASE("random matches direct-summation oracle") {
    const TensorD x = random_tensor<double>({2, 3, 5, 4, 3}, 31);
    const TensorD k = random_tensor<double>({4, 3, 3, 3, 1}, 32);
    const TensorD b = random_tensor<double>({4}, 33);
    Graph<double> g;
    auto y = g.conv3d_same(g.constant(x), g.constant(k), g.constant(b));
    const TensorD ref = conv3d_oracle(x, k, b);
    for (std::size_t i = 0; i < ref.numel(); ++i) {
      CHECK(g.value(y)[i] == doctest::Approx(ref[i]).epsilon(1e-9));
    }
  }
  SUBCASE("even kernel and channel mismatch rejected") {
    Graph<double> g;
    auto x = g.constant(random_tensor<double>({1, 2, 4, 4, 2}, 41));
    CHECK_THROWS_AS(
        (void)g.conv3d_same(x, g.constant(TensorD({1, 2, 2, 3, 3})), g.constant(TensorD({1}))),
        std::invalid_argument);
    CHECK_THROWS_AS(
        (void)g.conv3d_same(x, g.constant(TensorD({1, 3, 3, 3, 3})), g.constant(TensorD({1}))),
        std::invalid_argument);
  }
}

TEST_CASE("maxpool3d window semantics") {
  SUBCASE("halves H and W, preserves T") {
    Graph<double> g;
    auto x = g.constant(random_tensor<double>({1, 3, 8, 6, 5}, 51));
    auto y = g.maxpool3d(x, 2, 2, 1);
    CHECK(g.value(y).shape() == std::vector<std::size_t>{1, 3, 4, 3, 5});
  }
  SUBCASE("constant input stays constant") {
    Graph<double> g;
    auto y = g.maxpool3d(g.constant(TensorD::full({1, 1, 4, 4, 2}, 3.5)), 2, 2, 1);
    for (std::size_t i = 0; i < g.value(y).numel(); ++i) CHECK(g.value(y)[i] == 3.5);
  }
  SUBCASE("random equals exhaustive window scan") {
    const TensorD x = random_tensor<double>({2, 2, 6, 4, 4}, 52);
    Graph<double> g;
    auto y = g.maxpool3d(g.constant(x), 2, 2, 1);
    const TensorD ref = maxpool_oracle(x, 2, 2, 1);
    for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(g.value(y)[i] == ref[i]);
  }
  SUBCASE("indivisible dims rejected") {
    Graph<double> g;
    CHECK_THROWS_AS((void)g.maxpool3d(g.constant(random_tensor<double>({1, 1, 5, 4, 2}, 53))),
                    std::invalid_argument);
  }
  SUBCASE("tie routes gradient to first occurrence") {
    Graph<double> g;
    auto x = g.param(TensorD::full({1, 1, 2, 2, 1}, 1.0));
    auto y = g.maxpool3d(x, 2, 2, 1);
    auto s = g.sum(y);
    g.backward(s);
    const TensorD& dx = g.grad(x);
    CHECK(dx[0] == 1.0);
    CHECK(dx[1] == 0.0);
    CHECK(dx[2] == 0.0);
    CHECK(dx[3] == 0.0);
  }
}

TEST_CASE("lstm zero parameters give zero hidden states") {
  Graph<double> g;
  auto x = g.constant(TensorD({2, 3, 4}));
  auto wx = g.constant(TensorD({4, 12}));
  auto wh = g.constant(TensorD({3, 12}));
  auto b = g.constant(TensorD({12}));
  auto y = g.lstm_seq(x, wx, wh, b);
  CHECK(g.value(y).shape() == std::vector<std::size_t>{2, 3, 3});
  for (std::size_t i = 0; i < g.value(y).numel(); ++i) CHECK(g.value(y)[i] == 0.0);
}

TEST_CASE("lstm single step matches gate-by-gate scalar oracle") {
  const std::size_t in = 3, u = 2;
  const TensorD x = random_tensor<double>({1, 1, in}, 61);
  const TensorD wx = random_tensor<double>({in, 4 * u}, 62);
  const TensorD wh = random_tensor<double>({u, 4 * u}, 63);
  const TensorD b = random_tensor<double>({4 * u}, 64);
  Graph<double> g;
  auto y = g.lstm_seq(g.constant(x), g.constant(wx), g.constant(wh), g.constant(b));
  for (std::size_t ui = 0; ui < u; ++ui) {
    auto gate_pre = [&](std::size_t block) {
      double a = b[block * u + ui];
      for (std::size_t i = 0; i < in; ++i) a += x[i] * wx[i * 4 * u + block * u + ui];
      return a;  // h_0 = 0, so no recurrent term on the first step
    };
    const double gi = sig(gate_pre(0));
    const double gf = sig(gate_pre(1));
    (void)gf;  // c_0 = 0: the forget path contributes nothing on step one
    const double gg = std::tanh(gate_pre(2));
    const double go = sig(gate_pre(3));
    const double c = gi * gg;
    const double h = go * std::tanh(c);
    CHECK(g.value(y)[ui] == doctest::Approx(h).epsilon(1e-6));
  }
}

TEST_CASE("finite differences validate every op backward") {
  const double tol = 1e-4;
  auto check = [&](auto build, const TensorD& x) {
    const auto res = grad_check<double>(build, x, 1e-5);
    CHECK(res.max_rel_err < tol);
  };

  SUBCASE("sum of squares is exact to 1e-8") {
    const TensorD x = random_tensor<double>({50}, 71);
    const auto res = grad_check<double>(
        [](Graph<double>& g, Var<double> v) { return g.sum(g.mul(v, v)); }, x, 1e-5);
    CHECK(res.max_rel_err < 1e-8);
  }
  SUBCASE("dense w.r.t. input, weights, bias") {
    const TensorD w = random_tensor<double>({4, 3}, 72);
    const TensorD xc = random_tensor<double>({2, 4}, 73);
    const TensorD b = random_tensor<double>({3}, 74);
    const TensorD probe = random_tensor<double>({2, 3}, 75);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return g.weighted_sum(g.dense(v, g.constant(w), g.constant(b)), probe);
        },
        xc);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return g.weighted_sum(g.dense(g.constant(xc), v, g.constant(b)), probe);
        },
        w);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return g.weighted_sum(g.dense(g.constant(xc), g.constant(w), v), probe);
        },
        b);
  }
  SUBCASE("conv3d w.r.t. input, kernel, bias") {
    const TensorD xc = random_tensor<double>({1, 2, 4, 3, 3}, 76);
    const TensorD k = random_tensor<double>({2, 2, 3, 3, 3}, 77);
    const TensorD b = random_tensor<double>({2}, 78);
    const TensorD probe = random_tensor<double>({1, 2, 4, 3, 3}, 79);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return g.weighted_sum(g.conv3d_same(v, g.constant(k), g.constant(b)), probe);
        },
        xc);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return g.weighted_sum(g.conv3d_same(g.constant(xc), v, g.constant(b)), probe);
        },
        k);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return g.weighted_sum(g.conv3d_same(g.constant(xc), g.constant(k), v), probe);
        },
        b);
  }
  SUBCASE("maxpool3d") {
    const TensorD xc = random_tensor<double>({1, 2, 4, 4, 2}, 80);
    const TensorD probe = random_tensor<double>({1, 2, 2, 2, 2}, 81);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return g.weighted_sum(g.maxpool3d(v, 2, 2, 1), probe);
        },
        xc);
  }
  SUBCASE("lstm w.r.t. input and all parameters") {
    const std::size_t in = 3, u = 4, steps = 3;
    const TensorD xc = random_tensor<double>({2, steps, in}, 82);
    const TensorD wx = random_tensor<double>({in, 4 * u}, 83, -0.5, 0.5);
    const TensorD wh = random_tensor<double>({u, 4 * u}, 84, -0.5, 0.5);
    const TensorD b = random_tensor<double>({4 * u}, 85, -0.5, 0.5);
    const TensorD probe = random_tensor<double>({2, steps, u}, 86);
    auto wrap = [&](Var<double> xv, Var<double> wxv, Var<double> whv, Var<double> bv,
                    Graph<double>& g) {
      return g.weighted_sum(g.lstm_seq(xv, wxv, whv, bv), probe);
    };
    check(
        [&](Graph<double>& g, Var<double> v) {
          return wrap(v, g.constant(wx), g.constant(wh), g.constant(b), g);
        },
        xc);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return wrap(g.constant(xc), v, g.constant(wh), g.constant(b), g);
        },
        wx);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return wrap(g.constant(xc), g.constant(wx), v, g.constant(b), g);
        },
        wh);
    check(
        [&](Graph<double>& g, Var<double> v) {
          return wrap(g.constant(xc), g.constant(wx), g.constant(wh), v, g);
        },
        b);
  }
  SUBCASE("batchnorm in train mode w.r.t. input, gamma, beta") {
    const TensorD xc = random_tensor<double>({4, 3}, 87);
    const TensorD gamma = random_tensor<double>({3}, 88, 0.5, 1.5);
    const TensorD beta = random_tensor<double>({3}, 89);
    const TensorD probe = random_tensor<double>({4, 3}, 90);
    auto run = [&](Graph<double>& g, Var<double> x, Var<double> ga, Var<double> be) {
      BnStats<double> stats = BnStats<double>::init(3);
      return g.weighted_sum(g.batchnorm(x, ga, be, &stats, Mode::kTrain), probe);
    };
    check([&](Graph<double>& g, Var<double> v) {
      return run(g, v, g.constant(gamma), g.constant(beta));
    }, xc);
    check([&](Graph<double>& g, Var<double> v) {
      return run(g, g.constant(xc), v, g.constant(beta));
    }, gamma);
    check([&](Graph<double>& g, Var<double> v) {
      return run(g, g.constant(xc), g.constant(gamma), v);
    }, beta);
  }
  SUBCASE("activations, dropout with fixed seed, noise") {
    const TensorD xc = random_tensor<double>({3, 5}, 91);
    const TensorD probe = random_tensor<double>({3, 5}, 92);
    check([&](Graph<double>& g, Var<double> v) {
      return g.weighted_sum(g.leaky_relu(v), probe);
    }, xc);
    check([&](Graph<double>& g, Var<double> v) {
      return g.weighted_sum(g.elu(v), probe);
    }, xc);
    check([&](Graph<double>& g, Var<double> v) {
      return g.weighted_sum(g.sigmoid(v), probe);
    }, xc);
    check([&](Graph<double>& g, Var<double> v) {
      return g.weighted_sum(g.dropout(v, 0.3, Mode::kTrain, 1234), probe);
    }, xc);
    check([&](Graph<double>& g, Var<double> v) {
      return g.weighted_sum(g.gaussian_noise(v, 0.1, Mode::kTrain, 99), probe);
    }, xc);
    check([&](Graph<double>& g, Var<double> v) {
      return g.weighted_sum(g.time_major(g.reshape(v, {1, 3, 1, 5, 1})),
                            random_tensor<double>({1, 1, 15}, 93));
    }, xc);
  }
}

TEST_CASE("batchnorm train statistics and inference transform") {
  SUBCASE("normalizes to zero mean, unit variance") {
    const TensorD x = random_tensor<double>({64, 5}, 101, -4.0, 4.0);
    Graph<double> g;
    BnStats<double> stats = BnStats<double>::init(5);
    auto y = g.batchnorm(g.constant(x), g.constant(TensorD::full({5}, 1.0)),
                         g.constant(TensorD({5})), &stats, Mode::kTrain);
    for (std::size_t f = 0; f < 5; ++f) {
      double m = 0, v = 0;
      for (std::size_t n = 0; n < 64; ++n) m += g.value(y)[n * 5 + f];
      m /= 64;
      for (std::size_t n = 0; n < 64; ++n) {
        const double d = g.value(y)[n * 5 + f] - m;
        v += d * d;
      }
      v /= 64;
      CHECK(std::abs(m) < 1e-6);
      CHECK(std::abs(v - 1.0) < 1e-5);
    }
  }
  SUBCASE("affine parameters scale a normalized input") {
    TensorD x({128, 2});
    Rng rng(102);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.gaussian();
    Graph<double> g;
    BnStats<double> stats = BnStats<double>::init(2);
    auto y = g.batchnorm(g.constant(x), g.constant(TensorD::full({2}, 2.0)),
                         g.constant(TensorD::full({2}, 3.0)), &stats, Mode::kTrain);
    for (std::size_t f = 0; f < 2; ++f) {
      double m = 0, v = 0;
      for (std::size_t n = 0; n < 128; ++n) m += g.value(y)[n * 2 + f];
      m /= 128;
      for (std::size_t n = 0; n < 128; ++n) {
        const double d = g.value(y)[n * 2 + f] - m;
        v += d * d;
      }
      v /= 128;
      CHECK(m == doctest::Approx(3.0).epsilon(1e-9));
      CHECK(std::sqrt(v) == doctest::Approx(2.0).epsilon(1e-3));
    }
  }
  SUBCASE("inference uses running moments") {
    const TensorD x = random_tensor<double>({3, 4}, 103);
    Graph<double> g;
    BnStats<double> stats = BnStats<double>::init(4);  // mean 0, var 1
    auto y = g.batchnorm(g.constant(x), g.constant(TensorD::full({4}, 1.5)),
                         g.constant(TensorD::full({4}, 0.25)), &stats, Mode::kInfer);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      CHECK(g.value(y)[i] == doctest::Approx(1.5 * x[i] + 0.25).epsilon(1e-4));
    }
  }
  SUBCASE("running moments update with momentum 0.99") {
    const TensorD x = TensorD({4, 1}, {1.0, 2.0, 3.0, 4.0});
    Graph<double> g;
    BnStats<double> stats = BnStats<double>::init(1);
    (void)g.batchnorm(g.constant(x), g.constant(TensorD::full({1}, 1.0)),
                      g.constant(TensorD({1})), &stats, Mode::kTrain);
    CHECK(stats.mean[0] == doctest::Approx(0.99 * 0.0 + 0.01 * 2.5));
    CHECK(stats.var[0] == doctest::Approx(0.99 * 1.0 + 0.01 * 1.25));
  }
  SUBCASE("batch of one rejected in train mode") {
    Graph<double> g;
    BnStats<double> stats = BnStats<double>::init(4);
    CHECK_THROWS_AS((void)g.batchnorm(g.constant(random_tensor<double>({1, 4}, 104)),
                                      g.constant(TensorD::full({4}, 1.0)),
                                      g.constant(TensorD({4})), &stats, Mode::kTrain),
                    std::invalid_argument);
  }
}

TEST_CASE("dropout semantics and statistics") {
  const TensorD ones = TensorD::full({1000000}, 1.0);
  SUBCASE("p=0 and inference mode are identity") {
    Graph<double> g;
    auto y0 = g.dropout(g.constant(ones), 0.0, Mode::kTrain, 5);
    auto yi = g.dropout(g.constant(ones), 0.9, Mode::kInfer, 5);
    for (std::size_t i = 0; i < 100; ++i) {
      CHECK(g.value(y0)[i] == 1.0);
      CHECK(g.value(yi)[i] == 1.0);
    }
  }
  SUBCASE("p=0.25 keeps the mean and the advertised zero fraction") {
    Graph<double> g;
    auto y = g.dropout(g.constant(ones), 0.25, Mode::kTrain, 1234);
    double mean = 0;
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < ones.numel(); ++i) {
      mean += g.value(y)[i];
      zeros += g.value(y)[i] == 0.0;
    }
    mean /= double(ones.numel());
    const double zfrac = double(zeros) / double(ones.numel());
    CHECK(mean > 0.99);
    CHECK(mean < 1.01);
    CHECK(zfrac > 0.248);
    CHECK(zfrac < 0.252);
  }
  SUBCASE("bit-reproducible for a fixed (seed, mode, shape)") {
    Graph<double> g;
    auto a = g.dropout(g.constant(ones), 0.5, Mode::kTrain, 77);
    auto b = g.dropout(g.constant(ones), 0.5, Mode::kTrain, 77);
    auto c = g.dropout(g.constant(ones), 0.5, Mode::kTrain, 78);
    bool same = true, differs = false;
    for (std::size_t i = 0; i < 10000; ++i) {
      same = same && g.value(a)[i] == g.value(b)[i];
      differs = differs || g.value(a)[i] != g.value(c)[i];
    }
    CHECK(same);
    CHECK(differs);
  }
  SUBCASE("p out of range rejected") {
    Graph<double> g;
    CHECK_THROWS_AS((void)g.dropout(g.constant(ones), 1.0, Mode::kTrain, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)g.dropout(g.constant(ones), -0.1, Mode::kTrain, 1),
                    std::invalid_argument);
  }
}

TEST_CASE("gaussian noise semantics and statistics") {
  const TensorD zeros({1000000});
  SUBCASE("sigma=0 and inference mode are identity") {
    Graph<double> g;
    auto y0 = g.gaussian_noise(g.constant(zeros), 0.0, Mode::kTrain, 5);
    auto yi = g.gaussian_noise(g.constant(zeros), 0.5, Mode::kInfer, 5);
    for (std::size_t i = 0; i < 100; ++i) {
      CHECK(g.value(y0)[i] == 0.0);
      CHECK(g.value(yi)[i] == 0.0);
    }
  }
  SUBCASE("sigma=0.05 sample standard deviation") {
    Graph<double> g;
    auto y = g.gaussian_noise(g.constant(zeros), 0.05, Mode::kTrain, 4321);
    double m = 0;
    for (std::size_t i = 0; i < zeros.numel(); ++i) m += g.value(y)[i];
    m /= double(zeros.numel());
    double v = 0;
    for (std::size_t i = 0; i < zeros.numel(); ++i) {
      const double d = g.value(y)[i] - m;
      v += d * d;
    }
    const double stddev = std::sqrt(v / double(zeros.numel()));
    CHECK(stddev > 0.0498);
    CHECK(stddev < 0.0502);
  }
  SUBCASE("negative sigma rejected") {
    Graph<double> g;
    CHECK_THROWS_AS((void)g.gaussian_noise(g.constant(zeros), -0.1, Mode::kTrain, 1),
                    std::invalid_argument);
  }
}

TEST_CASE("activation values") {
  Graph<double> g;
  auto x = g.constant(TensorD({4}, {-1.0, 2.0, 0.0, -20.0}));
  auto lr = g.leaky_relu(x);
  CHECK(g.value(lr)[0] == doctest::Approx(-0.01));
  CHECK(g.value(lr)[1] == doctest::Approx(2.0));
  auto el = g.elu(x);
  CHECK(g.value(el)[2] == doctest::Approx(0.0));
  CHECK(g.value(el)[3] == doctest::Approx(-1.0).epsilon(1e-6));
  auto sg = g.sigmoid(g.constant(TensorD({1}, {0.0})));
  CHECK(g.value(sg)[0] == doctest::Approx(0.5));

  // Strict open-interval bound even under extreme saturation.
  auto sat = g.sigmoid(g.constant(TensorD({2}, {1e6, -1e6})));
  CHECK(g.value(sat)[0] < 1.0);
  CHECK(g.value(sat)[0] > 0.0);
  CHECK(g.value(sat)[1] > 0.0);
  CHECK(g.value(sat)[1] < 1.0);
}

TEST_CASE("float sigmoid stays inside the open interval") {
  Graph<float> g;
  auto sat = g.sigmoid(g.constant(TensorF({3}, {1e6f, -1e6f, 30.0f})));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g.value(sat)[i] > 0.0f);
    CHECK(g.value(sat)[i] < 1.0f);
  }
}
