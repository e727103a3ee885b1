// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Video-side preprocessing (grayscale normalization, temporal derivatives,
// slicing), the paired synthetic corpus generator, and the on-disk frame
// and manifest formats.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "liplab/audspec.hpp"
#include "liplab/tensor.hpp"

namespace liplab {

struct FrameSequence {
  std::size_t t = 0, h = 0, w = 0;
  double frame_rate = 25.0;
  std::vector<float> data;  // time-major [T][H][W]

  float& at(std::size_t ti, std::size_t y, std::size_t x) {
    return data[(ti * h + y) * w + x];
  }
  float at(std::size_t ti, std::size_t y, std::size_t x) const {
    return data[(ti * h + y) * w + x];
  }
};

// Bilinear resize to out_h x out_w, then normalize the whole sequence to
// zero mean / unit standard deviation. Constant sequences are rejected.
FrameSequence preprocess(const FrameSequence& frames, std::size_t out_h = 128,
                         std::size_t out_w = 128);

// Raw channel plus first and second temporal derivatives (forward
// differences, last value repeated at the boundary) -> [3, H, W, T].
TensorF derivatives(const FrameSequence& frames);

// Non-overlapping order-preserving partitions; trailing remainders drop.
std::vector<TensorF> slice_video(const TensorF& d, std::size_t lv);       // K x [3,H,W,lv]
std::vector<TensorF> slice_codes(const TensorF& codes, std::size_t la);   // K x [la*B]

// Trims both sides to the same K; throws only if either side is empty.
void pair_slice_count(std::size_t t_video, std::size_t lv, std::size_t t_codes,
                      std::size_t la, std::size_t* k_out);

struct SynthPair {
  FrameSequence frames;
  Waveform wav;
};

// Desk-scale stand-in for a recorded corpus: a sequence of 200 ms
// pseudo-phones. Each segment picks one of 8 two-formant vowels rendered
// as additive harmonics of a per-speaker pitch, and the mouth is drawn as
// an ellipse whose aperture/width encode the formant pair, so the
// video-to-audio mapping is injective and learnable.
SynthPair synth_pair(std::uint64_t seed, double duration_s);

std::size_t synth_phone_count();
std::size_t synth_speaker_count();
// Single rendered segment for a given (speaker, phone); used by generator
// audits.
SynthPair synth_segment(std::size_t speaker, std::size_t phone);

struct ManifestEntry {
  std::string id;
  std::string wav;     // file name relative to the corpus dir
  std::string frames;  // file name relative to the corpus dir
  std::string split;   // train | val | test
  std::uint64_t seed = 0;
};

// Writes n WAV + VFRM pairs plus manifest.json with a shuffled 90/5/5
// split. Regeneration with the same seed is byte-identical.
std::vector<ManifestEntry> build_dataset(std::size_t n, std::uint64_t seed,
                                         const std::filesystem::path& out_dir,
                                         double duration_s = 3.0);

void write_manifest(const std::filesystem::path& dir,
                    const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

// VFRM container: magic "VFRM", u32 version=1, u32 T, u32 H, u32 W,
// f32 frame_rate, then T*H*W bytes u8 grayscale row-major, time-major.
void write_frames(const std::filesystem::path& path, const FrameSequence& f);
FrameSequence read_frames(const std::filesystem::path& path);

}  // namespace liplab
