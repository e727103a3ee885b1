// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#include "liplab/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <mutex>
#include <stdexcept>

namespace liplab::dsp {
namespace {
// FFTW's planner mutates global state; all plan create/destroy calls go
// through this lock. fftw_execute on distinct plans is thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

struct RealFft::Impl {
  std::size_t nfft = 0;
  double* re = nullptr;
  fftw_complex* cx = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;

  explicit Impl(std::size_t n) : nfft(n) {
    if (n == 0) throw std::invalid_argument("RealFft: zero size");
    re = fftw_alloc_real(n);
    cx = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), re, cx, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), cx, re, FFTW_ESTIMATE);
    if (!fwd || !inv) throw std::runtime_error("RealFft: planning failed");
  }

  ~Impl() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (inv) fftw_destroy_plan(inv);
    fftw_free(re);
    fftw_free(cx);
  }
};

RealFft::RealFft(std::size_t nfft) : impl_(std::make_unique<Impl>(nfft)) {}
RealFft::~RealFft() = default;
RealFft::RealFft(RealFft&&) noexcept = default;
RealFft& RealFft::operator=(RealFft&&) noexcept = default;

std::size_t RealFft::size() const { return impl_->nfft; }
std::size_t RealFft::bins() const { return impl_->nfft / 2 + 1; }

void RealFft::forward(const double* in, std::size_t n, std::complex<double>* out) {
  if (n > impl_->nfft) throw std::invalid_argument("RealFft::forward: input too long");
  std::memcpy(impl_->re, in, n * sizeof(double));
  std::fill(impl_->re + n, impl_->re + impl_->nfft, 0.0);
  fftw_execute(impl_->fwd);
  // std::complex<double> is layout-compatible with fftw_complex.
  std::memcpy(reinterpret_cast<double*>(out), impl_->cx,
              bins() * 2 * sizeof(double));
}

void RealFft::inverse(const std::complex<double>* in, double* out) {
  std::memcpy(impl_->cx, reinterpret_cast<const double*>(in), bins() * 2 * sizeof(double));
  fftw_execute(impl_->inv);
  const double scale = 1.0 / static_cast<double>(impl_->nfft);
  for (std::size_t i = 0; i < impl_->nfft; ++i) out[i] = impl_->re[i] * scale;
}

struct ComplexFft::Impl {
  std::size_t n = 0;
  fftw_complex* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  explicit Impl(std::size_t size) : n(size) {
    if (n == 0) throw std::invalid_argument("ComplexFft: zero size");
    in = fftw_alloc_complex(n);
    out = fftw_alloc_complex(n);
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan = fftw_plan_dft_1d(static_cast<int>(n), in, out, FFTW_FORWARD, FFTW_ESTIMATE);
    if (!plan) throw std::runtime_error("ComplexFft: planning failed");
  }

  ~Impl() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    if (plan) fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
};

ComplexFft::ComplexFft(std::size_t n) : impl_(std::make_unique<Impl>(n)) {}
ComplexFft::~ComplexFft() = default;
ComplexFft::ComplexFft(ComplexFft&&) noexcept = default;
ComplexFft& ComplexFft::operator=(ComplexFft&&) noexcept = default;

std::size_t ComplexFft::size() const { return impl_->n; }

void ComplexFft::forward(const std::complex<double>* in, std::complex<double>* out) {
  std::memcpy(impl_->in, reinterpret_cast<const double*>(in), impl_->n * 2 * sizeof(double));
  fftw_execute(impl_->plan);
  std::memcpy(reinterpret_cast<double*>(out), impl_->out, impl_->n * 2 * sizeof(double));
}

}  // namespace liplab::dsp
