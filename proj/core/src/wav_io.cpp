// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#include "liplab/wav_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "WAV I/O assumes a little-endian host");

namespace liplab {
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

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw std::invalid_argument("write_wav: bad sample rate");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  const std::uint32_t rate = static_cast<std::uint32_t>(w.sample_rate);
  os.write("RIFF", 4);
  write_pod<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_pod<std::uint32_t>(os, 16);
  write_pod<std::uint16_t>(os, 1);  // PCM
  write_pod<std::uint16_t>(os, 1);  // mono
  write_pod<std::uint32_t>(os, rate);
  write_pod<std::uint32_t>(os, rate * 2);  // byte rate
  write_pod<std::uint16_t>(os, 2);         // block align
  write_pod<std::uint16_t>(os, 16);        // bits per sample
  os.write("data", 4);
  write_pod<std::uint32_t>(os, data_bytes);
  for (double v : w.samples) {
    const long q = std::lround(v * 32768.0);
    const auto s = static_cast<std::int16_t>(std::clamp<long>(q, -32768, 32767));
    write_pod<std::int16_t>(os, s);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char tag[4];
  if (!is.read(tag, 4) || std::memcmp(tag, "RIFF", 4) != 0) {
    io_fail(path, 0, "bad magic, expected \"RIFF\"");
  }
  read_pod<std::uint32_t>(is, path, "riff size");
  if (!is.read(tag, 4) || std::memcmp(tag, "WAVE", 4) != 0) {
    io_fail(path, 8, "bad form type, expected \"WAVE\"");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<std::int16_t> pcm;
  bool have_data = false;

  while (is.peek() != EOF) {
    const std::streamoff chunk_off = is.tellg();
    if (!is.read(tag, 4)) break;
    const auto size = read_pod<std::uint32_t>(is, path, "chunk size");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) io_fail(path, chunk_off, "fmt chunk too small");
      format = read_pod<std::uint16_t>(is, path, "format");
      channels = read_pod<std::uint16_t>(is, path, "channels");
      rate = read_pod<std::uint32_t>(is, path, "rate");
      read_pod<std::uint32_t>(is, path, "byte rate");
      read_pod<std::uint16_t>(is, path, "block align");
      bits = read_pod<std::uint16_t>(is, path, "bits");
      is.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      pcm.resize(size / 2);
      if (!is.read(reinterpret_cast<char*>(pcm.data()),
                   static_cast<std::streamsize>(pcm.size() * 2))) {
        io_fail(path, chunk_off, "truncated data chunk");
      }
      if (size & 1) is.seekg(1, std::ios::cur);
      have_data = true;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
      if (!is) io_fail(path, chunk_off, "truncated chunk");
    }
  }
  if (!have_fmt) throw std::runtime_error(path.string() + ": missing fmt chunk");
  if (!have_data) throw std::runtime_error(path.string() + ": missing data chunk");
  if (format != 1 || bits != 16) {
    throw std::runtime_error(path.string() + ": only 16-bit PCM is supported");
  }
  if (channels != 1) {
    throw std::runtime_error(path.string() + ": only mono is supported, got " +
                             std::to_string(channels) + " channels");
  }

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) w.samples[i] = pcm[i] / 32768.0;
  return w;
}

}  // namespace liplab
