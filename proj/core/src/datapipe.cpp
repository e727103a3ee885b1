// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#include "liplab/datapipe.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "liplab/parallel.hpp"
#include "liplab/rng.hpp"
#include "liplab/wav_io.hpp"

static_assert(std::endian::native == std::endian::little,
              "VFRM I/O assumes a little-endian host");

namespace liplab {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSegmentSeconds = 0.2;
constexpr int kAudioRate = 8000;
constexpr double kVideoFps = 25.0;
constexpr std::size_t kSynthRes = 64;

struct Phone {
  double f1, f2;
};
// Two-formant inventory, classic vowel chart values (Hz).
constexpr Phone kPhones[8] = {{270, 2290}, {390, 1990}, {530, 1840}, {660, 1720},
                              {730, 1090}, {570, 840},  {440, 1020}, {300, 870}};
constexpr double kPitches[4] = {110.0, 146.0, 196.0, 233.0};

double lerp(double a, double b, double t) { return a + (b - a) * t; }

// Soft-edged value for one implicit ellipse level set.
double smooth_step(double edge, double width, double v) {
  const double t = std::clamp((v - edge) / width, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

void render_mouth(FrameSequence& fs, std::size_t frame, std::size_t speaker,
                  std::size_t phone) {
  const Phone& ph = kPhones[phone];
  // F1 opens the mouth, F2 spreads it.
  const double aperture = lerp(5.0, 22.0, (ph.f1 - 270.0) / (730.0 - 270.0));
  const double width = lerp(9.0, 26.0, (ph.f2 - 840.0) / (2290.0 - 840.0));
  const double face_gray = 0.34 + 0.10 * static_cast<double>(speaker);
  const double lip_thickness = 1.6 + 0.5 * static_cast<double>(speaker);
  const double cx = (kSynthRes - 1) / 2.0;  // centered so a mirror is exact
  const double cy = kSynthRes * 0.58;

  for (std::size_t y = 0; y < fs.h; ++y) {
    for (std::size_t x = 0; x < fs.w; ++x) {
      const double dx = (static_cast<double>(x) - cx) / width;
      const double dy = (static_cast<double>(y) - cy) / aperture;
      const double e = dx * dx + dy * dy;
      // Ring outer level set at a speaker-dependent thickness.
      const double ring =
          1.0 + 2.0 * lip_thickness / std::min(width, aperture) +
          lip_thickness * lip_thickness / (width * aperture);
      double v = face_gray;
      const double lip = 0.82, cavity = 0.05;
      if (e < ring) v = lip;
      const double inner = smooth_step(1.0, 0.15, e);  // 0 inside, 1 outside
      if (e < 1.0 + 0.15) v = lerp(cavity, v, inner);
      const double outer = smooth_step(ring, 0.2, e);
      if (e >= 1.0 && e < ring + 0.2) v = lerp(lip, face_gray, outer);
      fs.at(frame, y, x) = static_cast<float>(v);
    }
  }
}

void render_audio_segment(std::vector<double>& out, std::size_t offset, std::size_t len,
                          std::size_t speaker, std::size_t phone) {
  const double f0 = kPitches[speaker];
  const Phone& ph = kPhones[phone];
  const double bw = 90.0;

  std::vector<double> amp;
  std::vector<double> freq;
  for (std::size_t h = 1;; ++h) {
    const double f = f0 * static_cast<double>(h);
    if (f > 3400.0) break;
    const double u1 = (f - ph.f1) / bw, u2 = (f - ph.f2) / bw;
    const double res = 1.0 / (1.0 + u1 * u1) + 0.8 / (1.0 + u2 * u2);
    amp.push_back(res / std::pow(static_cast<double>(h), 0.35));
    freq.push_back(f);
  }

  std::vector<double> seg(len, 0.0);
  double peak = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / kAudioRate;
    double v = 0.0;
    for (std::size_t h = 0; h < amp.size(); ++h) v += amp[h] * std::sin(2.0 * kPi * freq[h] * t);
    seg[i] = v;
    peak = std::max(peak, std::abs(v));
  }
  const double scale = peak > 0.0 ? 0.42 / peak : 0.0;
  const std::size_t fade = 40;  // 5 ms raised-cosine ramps avoid clicks
  for (std::size_t i = 0; i < len; ++i) {
    double g = scale;
    if (i < fade) g *= 0.5 * (1.0 - std::cos(kPi * i / fade));
    if (len - 1 - i < fade) g *= 0.5 * (1.0 - std::cos(kPi * (len - 1 - i) / fade));
    out[offset + i] = seg[i] * g;
  }
}

}  // namespace

FrameSequence preprocess(const FrameSequence& frames, std::size_t out_h, std::size_t out_w) {
  if (frames.t == 0 || frames.h == 0 || frames.w == 0) {
    throw std::invalid_argument("preprocess: empty sequence");
  }
  FrameSequence out;
  out.t = frames.t;
  out.h = out_h;
  out.w = out_w;
  out.frame_rate = frames.frame_rate;
  out.data.resize(out.t * out_h * out_w);

  // Bilinear resize, pixel-center convention.
  const double sy = static_cast<double>(frames.h) / out_h;
  const double sx = static_cast<double>(frames.w) / out_w;
  parallel_for(out.t, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t ti = t0; ti < t1; ++ti) {
      for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, frames.h - 1.0);
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, frames.h - 1);
        const double wy = fy - y0;
        for (std::size_t x = 0; x < out_w; ++x) {
          const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, frames.w - 1.0);
          const auto x0 = static_cast<std::size_t>(fx);
          const std::size_t x1 = std::min(x0 + 1, frames.w - 1);
          const double wx = fx - x0;
          const double v = (1 - wy) * ((1 - wx) * frames.at(ti, y0, x0) +
                                       wx * frames.at(ti, y0, x1)) +
                           wy * ((1 - wx) * frames.at(ti, y1, x0) +
                                 wx * frames.at(ti, y1, x1));
          out.at(ti, y, x) = static_cast<float>(v);
        }
      }
    }
  });

  // Zero mean / unit std over the whole sequence.
  double mean = 0.0;
  for (float v : out.data) mean += v;
  mean /= static_cast<double>(out.data.size());
  double var = 0.0;
  for (float v : out.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(out.data.size());
  if (var < 1e-12) throw std::invalid_argument("preprocess: zero-variance sequence");
  const double inv_std = 1.0 / std::sqrt(var);
  for (float& v : out.data) v = static_cast<float>((v - mean) * inv_std);
  return out;
}

TensorF derivatives(const FrameSequence& frames) {
  if (frames.t < 3) throw std::invalid_argument("derivatives: need at least 3 frames");
  const std::size_t t = frames.t, h = frames.h, w = frames.w;
  TensorF out({3, h, w, t});
  // channel 0: raw; channel 1: forward difference (last value repeated);
  // channel 2: forward difference of channel 1, same boundary rule.
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      float* raw = out.data() + ((0 * h + y) * w + x) * t;
      float* d1 = out.data() + ((1 * h + y) * w + x) * t;
      float* d2 = out.data() + ((2 * h + y) * w + x) * t;
      for (std::size_t ti = 0; ti < t; ++ti) raw[ti] = frames.at(ti, y, x);
      for (std::size_t ti = 0; ti + 1 < t; ++ti) d1[ti] = raw[ti + 1] - raw[ti];
      d1[t - 1] = d1[t - 2];
      for (std::size_t ti = 0; ti + 1 < t; ++ti) d2[ti] = d1[ti + 1] - d1[ti];
      d2[t - 1] = d2[t - 2];
    }
  return out;
}

std::vector<TensorF> slice_video(const TensorF& d, std::size_t lv) {
  if (d.ndim() != 4 || d.dim(0) != 3) {
    throw std::invalid_argument("slice_video: expected [3,H,W,T]");
  }
  if (lv == 0) throw std::invalid_argument("slice_video: lv must be positive");
  const std::size_t h = d.dim(1), w = d.dim(2), t = d.dim(3);
  const std::size_t k = t / lv;
  std::vector<TensorF> out;
  out.reserve(k);
  for (std::size_t s = 0; s < k; ++s) {
    TensorF slice({3, h, w, lv});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const float* src = d.data() + ((c * h + y) * w + x) * t + s * lv;
          float* dst = slice.data() + ((c * h + y) * w + x) * lv;
          std::copy_n(src, lv, dst);
        }
    out.push_back(std::move(slice));
  }
  return out;
}

std::vector<TensorF> slice_codes(const TensorF& codes, std::size_t la) {
  if (codes.ndim() != 2) throw std::invalid_argument("slice_codes: expected [T,B]");
  if (la == 0) throw std::invalid_argument("slice_codes: la must be positive");
  const std::size_t t = codes.dim(0), b = codes.dim(1);
  const std::size_t k = t / la;
  std::vector<TensorF> out;
  out.reserve(k);
  for (std::size_t s = 0; s < k; ++s) {
    TensorF flat({la * b});
    std::copy_n(codes.data() + s * la * b, la * b, flat.data());
    out.push_back(std::move(flat));
  }
  return out;
}

void pair_slice_count(std::size_t t_video, std::size_t lv, std::size_t t_codes,
                      std::size_t la, std::size_t* k_out) {
  const std::size_t kv = t_video / lv;
  const std::size_t ka = t_codes / la;
  const std::size_t k = std::min(kv, ka);
  if (k == 0) {
    throw std::invalid_argument("pair_slice_count: input shorter than one slice (video " +
                                std::to_string(t_video) + " frames / codes " +
                                std::to_string(t_codes) + " frames)");
  }
  *k_out = k;
}

std::size_t synth_phone_count() { return 8; }
std::size_t synth_speaker_count() { return 4; }

SynthPair synth_segment(std::size_t speaker, std::size_t phone) {
  if (speaker >= 4 || phone >= 8) throw std::invalid_argument("synth_segment: out of range");
  SynthPair p;
  const auto frames_per_seg = static_cast<std::size_t>(kVideoFps * kSegmentSeconds);
  const auto samples_per_seg = static_cast<std::size_t>(kAudioRate * kSegmentSeconds);
  p.frames.t = frames_per_seg;
  p.frames.h = p.frames.w = kSynthRes;
  p.frames.frame_rate = kVideoFps;
  p.frames.data.resize(frames_per_seg * kSynthRes * kSynthRes);
  for (std::size_t f = 0; f < frames_per_seg; ++f) render_mouth(p.frames, f, speaker, phone);
  p.wav.sample_rate = kAudioRate;
  p.wav.samples.assign(samples_per_seg, 0.0);
  render_audio_segment(p.wav.samples, 0, samples_per_seg, speaker, phone);
  return p;
}

SynthPair synth_pair(std::uint64_t seed, double duration_s) {
  const double segs_real = duration_s / kSegmentSeconds;
  const auto segs = static_cast<std::size_t>(std::llround(segs_real));
  if (segs == 0 || std::abs(segs_real - static_cast<double>(segs)) > 1e-9) {
    throw std::invalid_argument("synth_pair: duration must be a positive multiple of 0.2 s");
  }
  Rng rng(derive_seed(seed, 0x5E6));
  const auto speaker = static_cast<std::size_t>(rng.below(synth_speaker_count()));

  SynthPair p;
  const auto frames_per_seg = static_cast<std::size_t>(kVideoFps * kSegmentSeconds);
  const auto samples_per_seg = static_cast<std::size_t>(kAudioRate * kSegmentSeconds);
  p.frames.t = segs * frames_per_seg;
  p.frames.h = p.frames.w = kSynthRes;
  p.frames.frame_rate = kVideoFps;
  p.frames.data.resize(p.frames.t * kSynthRes * kSynthRes);
  p.wav.sample_rate = kAudioRate;
  p.wav.samples.assign(segs * samples_per_seg, 0.0);

  for (std::size_t s = 0; s < segs; ++s) {
    const auto phone = static_cast<std::size_t>(rng.below(synth_phone_count()));
    for (std::size_t f = 0; f < frames_per_seg; ++f) {
      render_mouth(p.frames, s * frames_per_seg + f, speaker, phone);
    }
    render_audio_segment(p.wav.samples, s * samples_per_seg, samples_per_seg, speaker, phone);
  }
  return p;
}

std::vector<ManifestEntry> build_dataset(std::size_t n, std::uint64_t seed,
                                         const std::filesystem::path& out_dir,
                                         double duration_s) {
  if (n == 0) throw std::invalid_argument("build_dataset: n must be positive");
  std::filesystem::create_directories(out_dir);

  // Shuffled 90/5/5 split assignment.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xD5));
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  const std::size_t n_val = n / 20, n_test = n / 20;
  std::vector<std::string> split(n, "train");
  for (std::size_t i = 0; i < n_val; ++i) split[order[i]] = "val";
  for (std::size_t i = 0; i < n_test; ++i) split[order[n_val + i]] = "test";

  std::vector<ManifestEntry> entries(n);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "sample_%04zu", i);
      ManifestEntry& m = entries[i];
      m.id = idbuf;
      m.wav = m.id + ".wav";
      m.frames = m.id + ".vfrm";
      m.split = split[i];
      m.seed = derive_seed(seed, 1000 + i);
      SynthPair p = synth_pair(m.seed, duration_s);
      write_wav(out_dir / m.wav, p.wav);
      write_frames(out_dir / m.frames, p.frames);
    }
  });
  write_manifest(out_dir, entries);
  return entries;
}

void write_manifest(const std::filesystem::path& dir,
                    const std::vector<ManifestEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : entries) {
    arr.push_back({{"id", m.id},
                   {"wav", m.wav},
                   {"frames", m.frames},
                   {"split", m.split},
                   {"seed", m.seed}});
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
  os << arr.dump(2) << "\n";
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("missing manifest.json in " + dir.string());
  nlohmann::json arr;
  is >> arr;
  std::vector<ManifestEntry> entries;
  for (const auto& j : arr) {
    ManifestEntry m;
    m.id = j.at("id").get<std::string>();
    m.wav = j.at("wav").get<std::string>();
    m.frames = j.at("frames").get<std::string>();
    m.split = j.at("split").get<std::string>();
    m.seed = j.value("seed", std::uint64_t{0});
    entries.push_back(std::move(m));
  }
  return entries;
}

void write_frames(const std::filesystem::path& path, const FrameSequence& f) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write("VFRM", 4);
  const std::uint32_t ver = 1;
  auto w32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  w32(ver);
  w32(static_cast<std::uint32_t>(f.t));
  w32(static_cast<std::uint32_t>(f.h));
  w32(static_cast<std::uint32_t>(f.w));
  const auto rate = static_cast<float>(f.frame_rate);
  os.write(reinterpret_cast<const char*>(&rate), 4);
  std::vector<std::uint8_t> bytes(f.data.size());
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const double v = std::clamp(static_cast<double>(f.data[i]), 0.0, 1.0);
    bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

FrameSequence read_frames(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "VFRM", 4) != 0) {
    throw std::runtime_error(path.string() + ": bad magic at offset 0, expected \"VFRM\"");
  }
  auto r32 = [&](const char* what) {
    std::uint32_t v = 0;
    const std::streamoff off = is.tellg();
    if (!is.read(reinterpret_cast<char*>(&v), 4)) {
      throw std::runtime_error(path.string() + ": truncated " + what + " at offset " +
                               std::to_string(static_cast<long long>(off)));
    }
    return v;
  };
  const auto ver = r32("version");
  if (ver != 1) throw std::runtime_error(path.string() + ": unsupported version");
  FrameSequence f;
  f.t = r32("frame count");
  f.h = r32("height");
  f.w = r32("width");
  float rate = 0;
  if (!is.read(reinterpret_cast<char*>(&rate), 4)) {
    throw std::runtime_error(path.string() + ": truncated frame rate");
  }
  f.frame_rate = rate;
  std::vector<std::uint8_t> bytes(f.t * f.h * f.w);
  if (!is.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    throw std::runtime_error(path.string() + ": truncated pixel payload");
  }
  f.data.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) f.data[i] = bytes[i] / 255.0f;
  return f;
}

}  // namespace liplab
