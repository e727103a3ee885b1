// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Auditory spectrogram codec: a 128-channel constant-Q cochlear analysis
// (forward), an iterative projection resynthesis (inverse), and the
// cube-root compression pair applied around the autoencoder.
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "liplab/tensor.hpp"

namespace liplab {

struct Waveform {
  std::vector<double> samples;  // nominal range [-1,1]
  int sample_rate = 8000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct AudSpecParams {
  double frm_len = 10.0;  // frame length, ms
  double tc = 10.0;       // leaky-integration time constant, ms
  int fac = -2;           // hair-cell nonlinearity selector; -2 = linear stage
  int shft = -1;          // octave shift of the filterbank
  std::size_t n_channels = 128;

  void validate() const;
};

struct AudSpec {
  TensorD frames;  // [T, 128], nonnegative
  AudSpecParams params;
  int source_rate = 8000;

  std::size_t n_frames() const { return frames.numel() ? frames.dim(0) : 0; }
  void validate() const;
};

// Center frequency of channel k (0-based): 440 * 2^((k-31)/24 + shft) Hz.
// Computed so that the octave relation CF(k+24) = 2*CF(k) is exact.
double channel_cf(std::size_t k, int shft);

// Anti-aliased downsampling (windowed-sinc low-pass at 0.45*target_rate).
// Upsampling is rejected; equal rates return a copy.
Waveform resample(const Waveform& w, int target_rate);

// Forward transform. Stages: constant-Q filterbank on the CF grid above,
// hair-cell stage (linear for fac = -2, then a first-order membrane
// low-pass), lateral inhibition (first difference across channels,
// half-wave rectified), and leaky integration sampled every frm_len ms.
AudSpec wav2aud(const Waveform& w, const AudSpecParams& p = {});

struct InversionInfo {
  double best_corr2d = 0.0;   // Corr2D(wav2aud(result), target)
  std::size_t best_iter = 0;  // 1-based projection index of the winner
};

// Iterative inverse: seeded white-noise start, then repeated
// analyze/rescale/resynthesize projections; returns the iterate whose
// re-analysis best matches the target (2D Pearson).
Waveform aud2wav(const AudSpec& s, std::size_t iters, std::uint64_t seed,
                 InversionInfo* info = nullptr);

AudSpec compress(const AudSpec& s);    // elementwise x^(1/3)
AudSpec decompress(const AudSpec& s);  // elementwise x^3

// AUDS container: magic "AUDS", u32 version=1, u32 T, u32 F=128,
// f32 frm_len, f32 tc, i32 fac, i32 shft, then T*F f32 row-major
// (time-major). All fields little-endian; lossless for f32 values.
void write_audspec(const std::filesystem::path& path, const AudSpec& s);
AudSpec read_audspec(const std::filesystem::path& path);

}  // namespace liplab
