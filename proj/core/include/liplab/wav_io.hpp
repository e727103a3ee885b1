// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "liplab/audspec.hpp"

namespace liplab {

// RIFF/WAVE, PCM 16-bit little-endian, mono. Samples map to [-1,1] by
// division by 32768; writing clamps to the representable range.
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

}  // namespace liplab
