// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "liplab/tensor.hpp"

namespace liplab {

// Named-tensor container persisting trained models.
//
// File layout (all little-endian): magic "LRCK", u32 version=1, u32 tensor
// count; per tensor: u16 name length, UTF-8 name, u8 dtype tag (0 = f32),
// u8 ndim, ndim x u32 dims, then the f32 payload. Round-trips losslessly.
struct Checkpoint {
  std::map<std::string, TensorF> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace liplab
