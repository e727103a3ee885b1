// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#include "liplab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

#include "liplab/dsp.hpp"

namespace liplab {
namespace {

void require_same_shape(const TensorD& a, const TensorD& b, const char* who) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                TensorD::shape_str(a.shape()) + " vs " +
                                TensorD::shape_str(b.shape()));
  }
}

// Full 2D DFT magnitudes of the mean-removed matrix.
Tensor<double> modulation_magnitude(const TensorD& m) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  double mean = 0.0;
  for (std::size_t i = 0; i < m.numel(); ++i) mean += m[i];
  mean /= static_cast<double>(m.numel());

  std::vector<std::complex<double>> work(rows * cols);
  {
    dsp::ComplexFft fft(cols);
    std::vector<std::complex<double>> in(cols), out(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) in[c] = m[r * cols + c] - mean;
      fft.forward(in.data(), out.data());
      for (std::size_t c = 0; c < cols; ++c) work[r * cols + c] = out[c];
    }
  }
  Tensor<double> mag({rows, cols});
  {
    dsp::ComplexFft fft(rows);
    std::vector<std::complex<double>> in(rows), out(rows);
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t r = 0; r < rows; ++r) in[r] = work[r * cols + c];
      fft.forward(in.data(), out.data());
      for (std::size_t r = 0; r < rows; ++r) mag[r * cols + c] = std::abs(out[r]);
    }
  }
  return mag;
}

}  // namespace

double corr2d(const TensorD& a, const TensorD& b) {
  require_same_shape(a, b, "corr2d");
  const std::size_t n = a.numel();
  if (n < 2) throw std::invalid_argument("corr2d: need at least 2 entries");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) throw std::invalid_argument("corr2d: constant input");
  return sab / std::sqrt(saa * sbb);
}

double corr2d(const TensorF& a, const TensorF& b) {
  return corr2d(a.cast<double>(), b.cast<double>());
}

double stmi(const TensorD& reference, const TensorD& test, double frame_rate_hz) {
  require_same_shape(reference, test, "stmi");
  if (reference.ndim() != 2) throw std::invalid_argument("stmi: expected [T,F]");
  const std::size_t rows = reference.dim(0), cols = reference.dim(1);

  const Tensor<double> tmag = modulation_magnitude(reference);
  const Tensor<double> nmag = modulation_magnitude(test);

  // Rate axis: DFT bin i of the frame sequence, |rate| = min(i,T-i)*fr/T.
  // Scale axis: channels sampled at 24/oct, |scale| = min(j,F-j)*24/F.
  const double channels_per_octave = 24.0;
  double t2 = 0.0, diff2 = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double rate = static_cast<double>(std::min(r, rows - r)) * frame_rate_hz /
                        static_cast<double>(rows);
    if (rate > 32.0) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      const double scale = static_cast<double>(std::min(c, cols - c)) *
                           channels_per_octave / static_cast<double>(cols);
      if (scale > 8.0) continue;
      const double tv = tmag[r * cols + c];
      const double d = tv - nmag[r * cols + c];
      t2 += tv * tv;
      diff2 += d * d;
    }
  }
  if (t2 <= 0.0) throw std::invalid_argument("stmi: silent reference");
  return std::max(0.0, 1.0 - diff2 / t2);
}

double log_spectral_distance(const TensorD& a, const TensorD& b) {
  require_same_shape(a, b, "log_spectral_distance");
  constexpr double kEps = 1e-5;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = 20.0 * std::log10((a[i] + kEps) / (b[i] + kEps));
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.numel()));
}

nlohmann::json metrics_report(const std::vector<SampleMetrics>& samples,
                              const nlohmann::json& config) {
  nlohmann::json per = nlohmann::json::array();
  double mc = 0.0, ms = 0.0, ml = 0.0;
  for (const auto& s : samples) {
    per.push_back({{"id", s.id}, {"corr2d", s.corr2d}, {"stmi", s.stmi}, {"lsd_db", s.lsd_db}});
    mc += s.corr2d;
    ms += s.stmi;
    ml += s.lsd_db;
  }
  const double n = samples.empty() ? 1.0 : static_cast<double>(samples.size());
  nlohmann::json cfg = config;
  cfg["stmi_note"] =
      "stmi is a modulation-spectrum index (rates <= 32 Hz, scales <= 8 cyc/oct), "
      "not the full cortical-model STMI; use for relative ordering only";
  cfg["lsd_note"] = "lsd_db is log-spectral distance, not PESQ";
  return {{"per_sample", per},
          {"mean", {{"corr2d", mc / n}, {"stmi", ms / n}, {"lsd_db", ml / n}}},
          {"config", cfg}};
}

}  // namespace liplab
