#pragma once

#include <unistd.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "liplab/rng.hpp"
#include "liplab/tensor.hpp"

namespace testutil {

template <typename T>
liplab::Tensor<T> random_tensor(std::vector<std::size_t> shape, std::uint64_t seed,
                                double lo = -1.0, double hi = 1.0) {
  liplab::Tensor<T> t(std::move(shape));
  liplab::Rng rng(seed);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Scoped temp directory under the system temp root.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("liplab_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Runs the CLI with stdout/stderr captured to files; returns the exit code.
struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

inline CliResult run_cli(const std::string& args, const std::filesystem::path& workdir) {
  const std::filesystem::path out = workdir / "stdout.txt";
  const std::filesystem::path err = workdir / "stderr.txt";
  const std::string cmd = std::string(LIPLAB_CLI_PATH) + " " + args + " > " + out.string() +
                          " 2> " + err.string();
  const int rc = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  auto read_text = [](const std::filesystem::path& p) {
    std::ifstream is(p);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  };
  r.out = read_text(out);
  r.err = read_text(err);
  return r;
}

}  // namespace testutil
