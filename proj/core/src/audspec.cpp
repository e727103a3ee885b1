// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#include "liplab/audspec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "liplab/dsp.hpp"
#include "liplab/parallel.hpp"
#include "liplab/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "AUDS I/O assumes a little-endian host");

namespace liplab {
namespace {

constexpr double kPi = 3.14159265358979323846;
// Relative bandwidth of the constant-Q bank: b = 0.035*CF gives a 4th-order
// gammatone-style magnitude response roughly one channel wide at -3 dB.
constexpr double kRelBandwidth = 0.035;
// Channels centered above this fraction of Nyquist output zeros.
constexpr double kNyquistGuard = 0.95;
// First-order hair-cell membrane low-pass cutoff, Hz.
constexpr double kMembraneCutoffHz = 2000.0;

struct Filterbank {
  int fs = 0;
  std::size_t nfft = 0;
  std::size_t channels = 0;
  std::vector<bool> alive;
  std::vector<std::vector<double>> response;  // per channel, nfft/2+1 magnitude bins
};

Filterbank build_filterbank(int fs, std::size_t nfft, const AudSpecParams& p) {
  Filterbank fb;
  fb.fs = fs;
  fb.nfft = nfft;
  fb.channels = p.n_channels;
  fb.alive.assign(p.n_channels, false);
  fb.response.resize(p.n_channels);
  const std::size_t bins = nfft / 2 + 1;
  const double nyquist = fs / 2.0;
  for (std::size_t k = 0; k < p.n_channels; ++k) {
    const double cf = channel_cf(k, p.shft);
    if (cf >= kNyquistGuard * nyquist) continue;  // would alias; stays silent
    fb.alive[k] = true;
    auto& h = fb.response[k];
    h.resize(bins);
    const double b = kRelBandwidth * cf;
    for (std::size_t i = 0; i < bins; ++i) {
      const double f = static_cast<double>(i) * fs / static_cast<double>(nfft);
      const double u = (f - cf) / b;
      const double den = 1.0 + u * u;
      h[i] = 1.0 / (den * den);
    }
  }
  return fb;
}

struct Analysis {
  std::vector<std::vector<double>> bands;  // raw zero-phase band signals
  TensorD aud;                             // [T, channels]
};

// Shared forward machinery: band split, hair-cell membrane, lateral
// inhibition, half-wave rectification, leaky integration.
Analysis analyze(const std::vector<double>& x, const Filterbank& fb,
                 const AudSpecParams& p, std::size_t frame_len, std::size_t t_frames,
                 bool keep_bands) {
  const std::size_t n = x.size();
  const std::size_t bins = fb.nfft / 2 + 1;

  std::vector<std::complex<double>> spectrum(bins);
  {
    dsp::RealFft fft(fb.nfft);
    fft.forward(x.data(), n, spectrum.data());
  }

  Analysis out;
  out.bands.assign(keep_bands ? fb.channels : 0, {});
  std::vector<std::vector<double>> membrane(fb.channels);

  const double a_mem = std::exp(-2.0 * kPi * kMembraneCutoffHz / fb.fs);
  parallel_for(fb.channels, [&](std::size_t k0, std::size_t k1) {
    dsp::RealFft fft(fb.nfft);
    std::vector<std::complex<double>> shaped(bins);
    std::vector<double> time(fb.nfft);
    for (std::size_t k = k0; k < k1; ++k) {
      auto& mem = membrane[k];
      mem.assign(n, 0.0);
      if (!fb.alive[k]) {
        if (keep_bands) out.bands[k].assign(n, 0.0);
        continue;
      }
      const auto& h = fb.response[k];
      for (std::size_t i = 0; i < bins; ++i) shaped[i] = spectrum[i] * h[i];
      fft.inverse(shaped.data(), time.data());
      if (keep_bands) out.bands[k].assign(time.begin(), time.begin() + n);
      // fac = -2: ionic nonlinearity bypassed; membrane low-pass only.
      double state = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        state = (1.0 - a_mem) * time[i] + a_mem * state;
        mem[i] = state;
      }
    }
  });

  out.aud = TensorD({t_frames, fb.channels});
  const double a_tc = std::exp(-1.0 / (fb.fs * p.tc / 1000.0));
  parallel_for(fb.channels, [&](std::size_t k0, std::size_t k1) {
    std::vector<double> rectified(n);
    for (std::size_t k = k0; k < k1; ++k) {
      const std::vector<double>& cur = membrane[k];
      const std::vector<double>* prev = k ? &membrane[k - 1] : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = prev ? cur[i] - (*prev)[i] : cur[i];
        rectified[i] = d > 0.0 ? d : 0.0;
      }
      double acc = 0.0;
      std::size_t frame = 0;
      for (std::size_t i = 0; i < n && frame < t_frames; ++i) {
        acc = a_tc * acc + (1.0 - a_tc) * rectified[i];
        if ((i + 1) % frame_len == 0) out.aud[frame++ * fb.channels + k] = acc;
      }
    }
  });
  return out;
}

double safe_corr2d(const TensorD& a, const TensorD& b) {
  const std::size_t n = a.numel();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return -1.0;
  return sab / std::sqrt(saa * sbb);
}

std::size_t frame_samples(int fs, double frm_len_ms) {
  return static_cast<std::size_t>(std::llround(fs * frm_len_ms / 1000.0));
}

}  // namespace

void AudSpecParams::validate() const {
  if (frm_len <= 0.0) throw std::invalid_argument("AudSpecParams: frm_len must be > 0");
  if (tc <= 0.0) throw std::invalid_argument("AudSpecParams: tc must be > 0");
  if (n_channels != 128) throw std::invalid_argument("AudSpecParams: n_channels must be 128");
}

void AudSpec::validate() const {
  params.validate();
  if (frames.ndim() != 2 || frames.dim(1) != params.n_channels) {
    throw std::invalid_argument("AudSpec: frames must be [T, 128]");
  }
  for (std::size_t i = 0; i < frames.numel(); ++i) {
    if (!(frames[i] >= 0.0) || !std::isfinite(frames[i])) {
      throw std::invalid_argument("AudSpec: entries must be finite and nonnegative");
    }
  }
}

double channel_cf(std::size_t k, int shft) {
  const long num = static_cast<long>(k) - 31;  // position in 24ths of an octave
  long oct = num / 24;
  long rem = num % 24;
  if (rem < 0) {
    rem += 24;
    --oct;
  }
  // ldexp keeps the octave relation CF(k+24) = 2*CF(k) exact.
  return 440.0 * std::ldexp(std::exp2(static_cast<double>(rem) / 24.0),
                            static_cast<int>(oct) + shft);
}

Waveform resample(const Waveform& w, int target_rate) {
  if (w.samples.empty()) throw std::invalid_argument("resample: empty input");
  if (w.sample_rate <= 0 || target_rate <= 0) {
    throw std::invalid_argument("resample: rates must be positive");
  }
  if (target_rate > w.sample_rate) {
    throw std::invalid_argument("resample: upsampling rejected (target " +
                                std::to_string(target_rate) + " > source " +
                                std::to_string(w.sample_rate) + ")");
  }
  if (target_rate == w.sample_rate) return w;

  const double fs = w.sample_rate, ft = target_rate;
  const double cutoff = 0.45 * ft / fs;  // cycles per input sample
  const std::size_t half =
      std::max<std::size_t>(32, static_cast<std::size_t>(std::ceil(8.0 / cutoff)));
  const std::size_t out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(w.samples.size()) * ft / fs));

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.assign(out_len, 0.0);
  const auto n = static_cast<std::ptrdiff_t>(w.samples.size());
  parallel_for(out_len, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const double center = static_cast<double>(i) * fs / ft;
      const auto m0 = static_cast<std::ptrdiff_t>(std::ceil(center)) -
                      static_cast<std::ptrdiff_t>(half);
      const auto m1 = static_cast<std::ptrdiff_t>(std::floor(center)) +
                      static_cast<std::ptrdiff_t>(half);
      double acc = 0.0, ksum = 0.0;
      for (std::ptrdiff_t m = m0; m <= m1; ++m) {
        const double u = static_cast<double>(m) - center;
        const double z = u / static_cast<double>(half);
        const double window = 0.5 * (1.0 + std::cos(kPi * z));
        double kern;
        if (std::abs(u) < 1e-12) {
          kern = 2.0 * cutoff;
        } else {
          kern = std::sin(2.0 * kPi * cutoff * u) / (kPi * u);
        }
        kern *= window;
        ksum += kern;
        if (m >= 0 && m < n) acc += w.samples[m] * kern;
      }
      out.samples[i] = ksum != 0.0 ? acc / ksum : 0.0;
    }
  });
  return out;
}

AudSpec wav2aud(const Waveform& w, const AudSpecParams& p) {
  p.validate();
  if (w.sample_rate != 8000) {
    throw std::invalid_argument("wav2aud: expected 8000 Hz input, got " +
                                std::to_string(w.sample_rate) + " (resample first)");
  }
  const std::size_t frame_len = frame_samples(w.sample_rate, p.frm_len);
  if (w.samples.size() < frame_len) {
    throw std::invalid_argument("wav2aud: input shorter than one frame");
  }
  for (double v : w.samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("wav2aud: non-finite sample");
  }
  if (p.fac != -2) {
    throw std::invalid_argument("wav2aud: only the linear hair-cell stage (fac=-2) is supported");
  }
  const std::size_t t_frames = w.samples.size() / frame_len;
  const std::size_t nfft = dsp::next_pow2(w.samples.size() + 4096);
  const Filterbank fb = build_filterbank(w.sample_rate, nfft, p);

  AudSpec spec;
  spec.params = p;
  spec.source_rate = w.sample_rate;
  spec.frames = analyze(w.samples, fb, p, frame_len, t_frames, false).aud;
  return spec;
}

Waveform aud2wav(const AudSpec& s, std::size_t iters, std::uint64_t seed,
                 InversionInfo* info) {
  s.validate();
  if (iters < 1) throw std::invalid_argument("aud2wav: iters must be >= 1");
  const int fs = 8000;
  const AudSpecParams& p = s.params;
  const std::size_t frame_len = frame_samples(fs, p.frm_len);
  const std::size_t t_frames = s.n_frames();
  if (t_frames == 0) throw std::invalid_argument("aud2wav: empty spectrogram");
  const std::size_t n = t_frames * frame_len;
  const std::size_t channels = p.n_channels;
  const TensorD& target = s.frames;

  Waveform out;
  out.sample_rate = fs;

  double target_max = 0.0;
  for (std::size_t i = 0; i < target.numel(); ++i) target_max = std::max(target_max, target[i]);
  if (target_max <= 0.0) {
    // Zero magnitude target: every projection scales every channel by zero.
    out.samples.assign(n, 0.0);
    if (info) *info = {0.0, 1};
    return out;
  }

  const std::size_t nfft = dsp::next_pow2(n + 4096);
  const Filterbank fb = build_filterbank(fs, nfft, p);

  std::vector<double> x(n);
  {
    Rng rng(derive_seed(seed, 0xA2D));
    double rms = 0.0;
    for (auto& v : x) {
      v = rng.uniform(-1.0, 1.0);
      rms += v * v;
    }
    rms = std::sqrt(rms / n);
    for (auto& v : x) v *= 0.1 / rms;
  }

  std::vector<double> best_x;
  double best_corr = -2.0;
  std::size_t best_iter = 0;

  TensorD gains({t_frames, channels});
  for (std::size_t it = 1; it <= iters + 1; ++it) {
    const bool last = it == iters + 1;
    Analysis a = analyze(x, fb, p, frame_len, t_frames, !last);

    if (it >= 2) {
      // x currently holds projection it-1; score it.
      const double corr = safe_corr2d(a.aud, target);
      if (corr > best_corr) {
        best_corr = corr;
        best_iter = it - 1;
        best_x = x;
      }
    }
    if (last) break;

    // Per-cell magnitude ratio, clamped around the global energy match so
    // near-silent analysis cells cannot explode the next iterate. The
    // exponent under-relaxes the update: lateral inhibition couples
    // adjacent channels, and full-ratio steps overshoot and oscillate.
    double s2 = 0.0, c2 = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
      s2 += target[i] * target[i];
      c2 += a.aud[i] * a.aud[i];
    }
    const double rho = c2 > 0.0 ? std::sqrt(s2 / c2) : 1.0;
    const double floor_c = 1e-8 * std::sqrt(c2 / target.numel() + 1e-300);
    for (std::size_t i = 0; i < target.numel(); ++i) {
      const double g = target[i] / std::max(a.aud[i], floor_c);
      gains[i] = std::min(g, 10.0 * rho);
    }
    if (it > 1) {
      for (std::size_t i = 0; i < gains.numel(); ++i) {
        gains[i] = rho * std::pow(gains[i] / rho, 0.8);
      }
    }
    // Mild smoothing across the channel axis stabilizes the coupled
    // difference stage.
    for (std::size_t t = 0; t < t_frames; ++t) {
      double prev = gains[t * channels];
      for (std::size_t k = 1; k + 1 < channels; ++k) {
        const double cur = gains[t * channels + k];
        const double next = gains[t * channels + k + 1];
        gains[t * channels + k] = 0.25 * prev + 0.5 * cur + 0.25 * next;
        prev = cur;
      }
    }

    // Rescale each band by its per-frame gain (linear between frame
    // centers) and resynthesize by summing channels in fixed order.
    parallel_for(channels, [&](std::size_t k0, std::size_t k1) {
      for (std::size_t k = k0; k < k1; ++k) {
        if (!fb.alive[k]) continue;
        auto& band = a.bands[k];
        for (std::size_t i = 0; i < n; ++i) {
          const double pos =
              (static_cast<double>(i) - 0.5 * frame_len) / static_cast<double>(frame_len);
          double g;
          if (pos <= 0.0) {
            g = gains[k];
          } else if (pos >= static_cast<double>(t_frames - 1)) {
            g = gains[(t_frames - 1) * channels + k];
          } else {
            const auto f0 = static_cast<std::size_t>(pos);
            const double frac = pos - static_cast<double>(f0);
            g = (1.0 - frac) * gains[f0 * channels + k] +
                frac * gains[(f0 + 1) * channels + k];
          }
          band[i] *= g;
        }
      }
    });
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t k = 0; k < channels; ++k) {
      if (!fb.alive[k]) continue;
      const auto& band = a.bands[k];
      for (std::size_t i = 0; i < n; ++i) x[i] += band[i];
    }
    for (double v : x) {
      if (!std::isfinite(v)) throw std::runtime_error("aud2wav: projection diverged");
    }
  }

  out.samples = std::move(best_x);
  if (info) *info = {best_corr, best_iter};
  return out;
}

AudSpec compress(const AudSpec& s) {
  s.validate();
  AudSpec out = s;
  for (std::size_t i = 0; i < out.frames.numel(); ++i) out.frames[i] = std::cbrt(out.frames[i]);
  return out;
}

AudSpec decompress(const AudSpec& s) {
  s.validate();
  AudSpec out = s;
  for (std::size_t i = 0; i < out.frames.numel(); ++i) {
    const double v = out.frames[i];
    out.frames[i] = v * v * v;
  }
  return out;
}

namespace {

void io_fail(const std::filesystem::path& path, std::streamoff off, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what + " at offset " +
                           std::to_string(static_cast<long long>(off)));
}

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::ifstream& is, const std::filesystem::path& path, const char* what) {
  T v{};
  const std::streamoff off = is.tellg();
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    io_fail(path, off, std::string("truncated ") + what);
  }
  return v;
}

}  // namespace

void write_audspec(const std::filesystem::path& path, const AudSpec& s) {
  s.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write("AUDS", 4);
  write_pod<std::uint32_t>(os, 1);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.n_frames()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.params.n_channels));
  write_pod<float>(os, static_cast<float>(s.params.frm_len));
  write_pod<float>(os, static_cast<float>(s.params.tc));
  write_pod<std::int32_t>(os, s.params.fac);
  write_pod<std::int32_t>(os, s.params.shft);
  for (std::size_t i = 0; i < s.frames.numel(); ++i) {
    write_pod<float>(os, static_cast<float>(s.frames[i]));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

AudSpec read_audspec(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "AUDS", 4) != 0) {
    io_fail(path, 0, "bad magic, expected \"AUDS\"");
  }
  const auto version = read_pod<std::uint32_t>(is, path, "version");
  if (version != 1) io_fail(path, 4, "unsupported version " + std::to_string(version));
  const auto t = read_pod<std::uint32_t>(is, path, "frame count");
  const auto f = read_pod<std::uint32_t>(is, path, "channel count");
  if (f != 128) io_fail(path, 12, "channel count must be 128, got " + std::to_string(f));
  AudSpec s;
  s.params.frm_len = read_pod<float>(is, path, "frm_len");
  s.params.tc = read_pod<float>(is, path, "tc");
  s.params.fac = read_pod<std::int32_t>(is, path, "fac");
  s.params.shft = read_pod<std::int32_t>(is, path, "shft");
  s.params.n_channels = f;
  s.frames = TensorD({t, f});
  for (std::size_t i = 0; i < s.frames.numel(); ++i) {
    s.frames[i] = read_pod<float>(is, path, "payload");
  }
  s.validate();
  return s;
}

}  // namespace liplab
