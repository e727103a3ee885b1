#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "liplab/datapipe.hpp"
#include "liplab/metrics.hpp"
#include "liplab/rng.hpp"
#include "test_util.hpp"

using namespace liplab;
using testutil::TempDir;

namespace {

FrameSequence random_sequence(std::size_t t, std::size_t h, std::size_t w, std::uint64_t seed) {
  FrameSequence f;
  f.t = t;
  f.h = h;
  f.w = w;
  f.data.resize(t * h * w);
  Rng rng(seed);
  for (auto& v : f.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return f;
}

}  // namespace

TEST_CASE("preprocess normalizes and keeps the frame count") {
  FrameSequence f = random_sequence(75, 40, 40, 1);
  const FrameSequence out = preprocess(f, 128, 128);
  CHECK(out.t == 75);
  CHECK(out.h == 128);
  CHECK(out.w == 128);
  double mean = 0;
  for (float v : out.data) mean += v;
  mean /= double(out.data.size());
  double var = 0;
  for (float v : out.data) var += (v - mean) * (v - mean);
  var /= double(out.data.size());
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-5);
}

TEST_CASE("preprocess rejects constant input") {
  FrameSequence f;
  f.t = 4;
  f.h = f.w = 8;
  f.data.assign(4 * 64, 0.5f);
  CHECK_THROWS_AS((void)preprocess(f), std::invalid_argument);
}

TEST_CASE("bilinear resize agrees with a direct oracle at probe pixels") {
  // 256x256 checkerboard with period 8 -> at 128x128 the period halves to 4.
  FrameSequence f;
  f.t = 1;
  f.h = f.w = 256;
  f.data.resize(256 * 256);
  for (std::size_t y = 0; y < 256; ++y)
    for (std::size_t x = 0; x < 256; ++x) {
      f.data[y * 256 + x] = ((y / 8 + x / 8) % 2) ? 1.0f : 0.0f;
    }
  const FrameSequence out = preprocess(f, 128, 128);

  // Recompute normalization constants to undo them at the probes.
  std::vector<double> resized(128 * 128);
  auto bilinear = [&](double fy, double fx) {
    fy = std::clamp(fy, 0.0, 255.0);
    fx = std::clamp(fx, 0.0, 255.0);
    const auto y0 = static_cast<std::size_t>(fy);
    const auto x0 = static_cast<std::size_t>(fx);
    const std::size_t y1 = std::min<std::size_t>(y0 + 1, 255);
    const std::size_t x1 = std::min<std::size_t>(x0 + 1, 255);
    const double wy = fy - y0, wx = fx - x0;
    return (1 - wy) * ((1 - wx) * f.data[y0 * 256 + x0] + wx * f.data[y0 * 256 + x1]) +
           wy * ((1 - wx) * f.data[y1 * 256 + x0] + wx * f.data[y1 * 256 + x1]);
  };
  for (std::size_t y = 0; y < 128; ++y)
    for (std::size_t x = 0; x < 128; ++x) {
      resized[y * 128 + x] = bilinear((y + 0.5) * 2.0 - 0.5, (x + 0.5) * 2.0 - 0.5);
    }
  double mean = 0;
  for (double v : resized) mean += v;
  mean /= resized.size();
  double var = 0;
  for (double v : resized) var += (v - mean) * (v - mean);
  var /= resized.size();
  const double inv = 1.0 / std::sqrt(var);

  Rng rng(77);
  for (int probe = 0; probe < 16; ++probe) {
    const std::size_t y = rng.below(128), x = rng.below(128);
    const double expect = (resized[y * 128 + x] - mean) * inv;
    CHECK(out.at(0, y, x) == doctest::Approx(expect).epsilon(1e-4));
  }
  // Period halves: the pattern at stride 4 alternates like the source at 8.
  CHECK(out.at(0, 1, 1) * out.at(0, 1, 5) < 0.0f);
}

TEST_CASE("derivatives") {
  SUBCASE("constant sequence has zero derivative channels") {
    FrameSequence f;
    f.t = 5;
    f.h = f.w = 4;
    f.data.assign(5 * 16, 0.0f);
    for (std::size_t t = 0; t < 5; ++t) f.at(t, 1, 1) = 0.7f;
    const TensorF d = derivatives(f);
    CHECK(d.shape() == std::vector<std::size_t>{3, 4, 4, 5});
    for (std::size_t i = 16 * 5; i < d.numel(); ++i) CHECK(d[i] == 0.0f);
  }
  SUBCASE("linear ramp: first derivative constant, second zero") {
    FrameSequence f;
    f.t = 6;
    f.h = f.w = 2;
    f.data.resize(6 * 4);
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t i = 0; i < 4; ++i) f.data[t * 4 + i] = 0.1f * t;
    const TensorF d = derivatives(f);
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t t = 0; t < 6; ++t) {
          CHECK(d.at({1, y, x, t}) == doctest::Approx(0.1f));
          CHECK(d.at({2, y, x, t}) == doctest::Approx(0.0f).epsilon(1e-6));
        }
  }
  SUBCASE("random sequence matches the difference oracle") {
    FrameSequence f = random_sequence(7, 3, 3, 5);
    const TensorF d = derivatives(f);
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x) {
        for (std::size_t t = 0; t < 7; ++t) CHECK(d.at({0, y, x, t}) == f.at(t, y, x));
        for (std::size_t t = 0; t + 1 < 7; ++t) {
          CHECK(d.at({1, y, x, t}) == doctest::Approx(f.at(t + 1, y, x) - f.at(t, y, x)));
        }
        CHECK(d.at({1, y, x, 6}) == d.at({1, y, x, 5}));
      }
  }
  SUBCASE("too few frames rejected") {
    FrameSequence f = random_sequence(2, 4, 4, 6);
    CHECK_THROWS_AS((void)derivatives(f), std::invalid_argument);
  }
}

TEST_CASE("flip commutes with differentiation") {
  FrameSequence f = random_sequence(6, 4, 6, 8);
  FrameSequence flipped = f;
  for (std::size_t t = 0; t < f.t; ++t)
    for (std::size_t y = 0; y < f.h; ++y)
      for (std::size_t x = 0; x < f.w; ++x) flipped.at(t, y, x) = f.at(t, y, f.w - 1 - x);
  const TensorF a = derivatives(flipped);
  const TensorF b = derivatives(f);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < f.h; ++y)
      for (std::size_t x = 0; x < f.w; ++x)
        for (std::size_t t = 0; t < f.t; ++t) {
          CHECK(a.at({c, y, x, t}) == b.at({c, y, f.w - 1 - x, t}));
        }
}

TEST_CASE("slicing partitions exactly") {
  FrameSequence f = random_sequence(75, 4, 4, 9);
  const TensorF d = derivatives(f);
  const auto slices = slice_video(d, 5);
  CHECK(slices.size() == 15);
  // Concatenating the slices reproduces the input.
  for (std::size_t s = 0; s < slices.size(); ++s)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
          for (std::size_t t = 0; t < 5; ++t) {
            CHECK(slices[s].at({c, y, x, t}) == d.at({c, y, x, s * 5 + t}));
          }

  TensorF codes({300, 32});
  Rng rng(10);
  for (std::size_t i = 0; i < codes.numel(); ++i) codes[i] = float(rng.uniform());
  const auto cslices = slice_codes(codes, 20);
  CHECK(cslices.size() == 15);
  CHECK(cslices[0].numel() == 640);
  CHECK(cslices[3][7] == codes[3 * 640 + 7]);

  std::size_t k = 0;
  pair_slice_count(75, 5, 300, 20, &k);
  CHECK(k == 15);
}

TEST_CASE("trailing remainder drops symmetrically") {
  FrameSequence f = random_sequence(77, 4, 4, 11);
  const auto slices = slice_video(derivatives(f), 5);
  CHECK(slices.size() == 15);  // 2 frames dropped
  std::size_t k = 0;
  pair_slice_count(77, 5, 310, 20, &k);
  CHECK(k == 15);
  CHECK_THROWS_AS(pair_slice_count(3, 5, 10, 20, &k), std::invalid_argument);
}

TEST_CASE("synth_pair determinism and arithmetic") {
  const SynthPair a = synth_pair(1234, 3.0);
  const SynthPair b = synth_pair(1234, 3.0);
  CHECK(a.frames.t == 75);
  CHECK(a.wav.samples.size() == 24000);
  CHECK(a.wav.sample_rate == 8000);
  CHECK(a.frames.data == b.frames.data);
  CHECK(a.wav.samples == b.wav.samples);
  const SynthPair c = synth_pair(1235, 3.0);
  CHECK(a.wav.samples != c.wav.samples);
  CHECK_THROWS_AS((void)synth_pair(1, 0.3), std::invalid_argument);
  CHECK_THROWS_AS((void)synth_pair(1, 0.0), std::invalid_argument);
}

TEST_CASE("pseudo-phones are distinguishable in video and audio") {
  std::vector<SynthPair> segs;
  for (std::size_t p = 0; p < synth_phone_count(); ++p) segs.push_back(synth_segment(1, p));
  for (std::size_t i = 0; i < segs.size(); ++i) {
    for (std::size_t j = i + 1; j < segs.size(); ++j) {
      double l2 = 0;
      for (std::size_t q = 0; q < segs[i].frames.data.size(); ++q) {
        const double d = segs[i].frames.data[q] - segs[j].frames.data[q];
        l2 += d * d;
      }
      CHECK(l2 > 0.0);
      const AudSpec si = wav2aud(segs[i].wav);
      const AudSpec sj = wav2aud(segs[j].wav);
      CHECK(corr2d(si.frames, sj.frames) < 0.99);
    }
  }
}

TEST_CASE("build_dataset split sizes, unique ids, reproducibility") {
  TempDir dir("corpus_a");
  TempDir dir2("corpus_b");
  const auto entries = build_dataset(100, 42, dir.path, 0.2);
  REQUIRE(entries.size() == 100);
  std::size_t train = 0, val = 0, test = 0;
  std::set<std::string> ids;
  for (const auto& e : entries) {
    ids.insert(e.id);
    if (e.split == "train") ++train;
    if (e.split == "val") ++val;
    if (e.split == "test") ++test;
  }
  CHECK(ids.size() == 100);
  CHECK(train == 90);
  CHECK(val == 5);
  CHECK(test == 5);

  const auto entries2 = build_dataset(100, 42, dir2.path, 0.2);
  CHECK(testutil::slurp(dir.path / "manifest.json") ==
        testutil::slurp(dir2.path / "manifest.json"));
  for (const auto& e : entries2) {
    CHECK(testutil::slurp(dir.path / e.wav) == testutil::slurp(dir2.path / e.wav));
    CHECK(testutil::slurp(dir.path / e.frames) == testutil::slurp(dir2.path / e.frames));
  }

  const auto loaded = read_manifest(dir.path);
  REQUIRE(loaded.size() == 100);
  CHECK(loaded[3].id == entries[3].id);
  CHECK(loaded[3].split == entries[3].split);
  CHECK(loaded[3].seed == entries[3].seed);
}
