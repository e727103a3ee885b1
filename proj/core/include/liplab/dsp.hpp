// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <vector>

namespace liplab::dsp {

std::size_t next_pow2(std::size_t n);

// Real-input FFT pair of a fixed size, with internal buffers. One instance
// per thread; construction is serialized internally (the FFTW planner is
// not thread-safe), execution is not.
class RealFft {
 public:
  explicit RealFft(std::size_t nfft);
  ~RealFft();
  RealFft(RealFft&&) noexcept;
  RealFft& operator=(RealFft&&) noexcept;
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const;
  std::size_t bins() const;  // nfft/2 + 1

  // Zero-pads `in` (n <= nfft) and writes nfft/2+1 bins.
  void forward(const double* in, std::size_t n, std::complex<double>* out);
  // Inverse of forward, scaled by 1/nfft; writes nfft samples.
  void inverse(const std::complex<double>* in, double* out);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Forward complex DFT of a fixed size (no scaling).
class ComplexFft {
 public:
  explicit ComplexFft(std::size_t n);
  ~ComplexFft();
  ComplexFft(ComplexFft&&) noexcept;
  ComplexFft& operator=(ComplexFft&&) noexcept;
  ComplexFft(const ComplexFft&) = delete;
  ComplexFft& operator=(const ComplexFft&) = delete;

  std::size_t size() const;
  void forward(const std::complex<double>* in, std::complex<double>* out);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace liplab::dsp
