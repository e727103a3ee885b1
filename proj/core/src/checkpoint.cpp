// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#include "liplab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace liplab {
namespace {

void fail_at(const std::filesystem::path& path, std::streamoff off, const std::string& what) {
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
    fail_at(path, off, std::string("truncated ") + what);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write("LRCK", 4);
  write_pod<std::uint32_t>(os, 1);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long: " + name);
    write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint8_t>(os, 0);  // f32
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
    for (std::size_t d : t.shape()) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LRCK", 4) != 0) {
    fail_at(path, 0, "bad magic, expected \"LRCK\"");
  }
  const auto version = read_pod<std::uint32_t>(is, path, "version");
  if (version != 1) fail_at(path, 4, "unsupported version " + std::to_string(version));
  const auto count = read_pod<std::uint32_t>(is, path, "tensor count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint16_t>(is, path, "name length");
    std::string name(name_len, '\0');
    const std::streamoff noff = is.tellg();
    if (!is.read(name.data(), name_len)) fail_at(path, noff, "truncated name");
    const auto dtype = read_pod<std::uint8_t>(is, path, "dtype");
    if (dtype != 0) fail_at(path, is.tellg(), "unsupported dtype tag " + std::to_string(dtype));
    const auto ndim = read_pod<std::uint8_t>(is, path, "ndim");
    std::vector<std::size_t> shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = read_pod<std::uint32_t>(is, path, "dim");
      numel *= d;
    }
    std::vector<float> payload(ndim == 0 ? 0 : numel);
    const std::streamoff poff = is.tellg();
    if (!is.read(reinterpret_cast<char*>(payload.data()),
                 static_cast<std::streamsize>(payload.size() * sizeof(float)))) {
      fail_at(path, poff, "truncated payload for \"" + name + "\"");
    }
    ckpt.tensors.emplace(std::move(name), TensorF(std::move(shape), std::move(payload)));
  }
  return ckpt;
}

}  // namespace liplab
