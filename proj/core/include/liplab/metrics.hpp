// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction quality measures: Corr2D (2D Pearson), an STMI-style
// modulation index, and log-spectral distance. The STMI here compares 2D
// modulation-spectrum magnitudes of the auditory spectrograms directly
// rather than running a full cortical filter bank; it preserves the
// template-vs-test contract but its values are not comparable to the
// original index, only usable for relative ordering.
#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "liplab/tensor.hpp"

namespace liplab {

// Pearson correlation over all entries of two equal-shape matrices.
double corr2d(const TensorD& a, const TensorD& b);
double corr2d(const TensorF& a, const TensorF& b);

// Modulation-domain match in [0,1]: 1 - ||T - N||^2 / ||T||^2 (clamped),
// where T and N are 2D-DFT magnitudes of the mean-removed reference/test,
// restricted to rates <= 32 Hz and scales <= 8 cyc/oct. frame_rate_hz is
// the spectrogram frame rate (100 Hz for 10 ms frames).
double stmi(const TensorD& reference, const TensorD& test, double frame_rate_hz = 100.0);

// sqrt of the mean over cells of (20*log10((A+eps)/(B+eps)))^2, eps=1e-5.
double log_spectral_distance(const TensorD& a, const TensorD& b);

struct SampleMetrics {
  std::string id;
  double corr2d = 0.0;
  double stmi = 0.0;
  double lsd_db = 0.0;
};

nlohmann::json metrics_report(const std::vector<SampleMetrics>& samples,
                              const nlohmann::json& config);

}  // namespace liplab
