#include <doctest.h>

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

#include "liplab/audspec.hpp"
#include "liplab/datapipe.hpp"
#include "liplab/wav_io.hpp"
#include "test_util.hpp"

using namespace liplab;
using testutil::CliResult;
using testutil::run_cli;
using testutil::slurp;
using testutil::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

const char* kTinyAeConfig = R"({
  "lr": 0.001, "batch_size": 32, "epochs": 3, "seed": 5,
  "net": {"h": 32, "w": 32}
})";

}  // namespace

TEST_CASE("cli synth writes a corpus and is byte-reproducible") {
  TempDir dir("cli_synth");
  const auto a = dir.path / "a";
  const auto b = dir.path / "b";
  CliResult r1 = run_cli("synth --out " + a.string() + " --count 4 --seed 9 --duration 0.4",
                         dir.path);
  CHECK(r1.code == 0);
  CHECK(std::filesystem::exists(a / "manifest.json"));
  CHECK(std::filesystem::exists(a / "sample_0003.wav"));
  CHECK(std::filesystem::exists(a / "sample_0003.vfrm"));

  CliResult r2 = run_cli("synth --out " + b.string() + " --count 4 --seed 9 --duration 0.4",
                         dir.path);
  CHECK(r2.code == 0);
  for (const char* f : {"manifest.json", "sample_0000.wav", "sample_0002.vfrm"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
}

TEST_CASE("cli synth usage errors exit 2") {
  TempDir dir("cli_synth_bad");
  CHECK(run_cli("synth --out " + dir.path.string() + " --count 0 --seed 1", dir.path).code == 2);
  CHECK(run_cli("synth --count 4", dir.path).code == 2);  // missing --out
  CHECK(run_cli("synth --out " + dir.path.string() + " --count 2 --duration 0.3", dir.path)
            .code == 2);
}

TEST_CASE("cli audspec encode/decode round trip") {
  TempDir dir("cli_audspec");
  run_cli("synth --out " + dir.path.string() + " --count 1 --seed 3 --duration 1.0", dir.path);
  const auto wav = dir.path / "sample_0000.wav";
  const auto auds = dir.path / "x.auds";

  CliResult enc = run_cli("audspec encode " + wav.string() + " " + auds.string(), dir.path);
  CHECK(enc.code == 0);
  CHECK(enc.out.find("\"frames\":100") != std::string::npos);

  const auto out_wav = dir.path / "rt.wav";
  CliResult dec = run_cli("audspec decode " + auds.string() + " " + out_wav.string() +
                              " --iters 8 --seed 7",
                          dir.path);
  CHECK(dec.code == 0);
  CHECK(dec.err.find("round-trip corr2d") != std::string::npos);
  const Waveform rt = read_wav(out_wav);
  CHECK(rt.samples.size() == 8000);
}

TEST_CASE("cli audspec encode rejects a non-WAV file with exit 1") {
  TempDir dir("cli_badwav");
  const auto bogus = dir.path / "not_audio.wav";
  write_text(bogus, "definitely not RIFF data");
  CliResult r = run_cli("audspec encode " + bogus.string() + " " + (dir.path / "x.auds").string(),
                        dir.path);
  CHECK(r.code == 1);
  CHECK(r.err.find("bad magic") != std::string::npos);
  CHECK(r.err.find("RIFF") != std::string::npos);
}

TEST_CASE("cli train ae writes checkpoint and history; reruns are identical") {
  TempDir dir("cli_train_ae");
  const auto corpus = dir.path / "corpus";
  run_cli("synth --out " + corpus.string() + " --count 4 --seed 2 --duration 0.4", dir.path);
  const auto cfg = dir.path / "ae.json";
  write_text(cfg, kTinyAeConfig);

  const auto ck1 = dir.path / "ae1.ckpt";
  const auto ck2 = dir.path / "ae2.ckpt";
  CliResult r1 = run_cli("train ae --data " + corpus.string() + " --config " + cfg.string() +
                             " --out " + ck1.string(),
                         dir.path);
  CHECK(r1.code == 0);
  CHECK(r1.out.find("final_val_loss") != std::string::npos);
  CHECK(std::filesystem::exists(ck1));
  CHECK(std::filesystem::exists(ck1.string() + ".json"));

  std::ifstream hist(ck1.string() + ".history.csv");
  std::string line;
  int rows = 0;
  std::getline(hist, line);
  CHECK(line == "epoch,train_loss,val_loss,lr");
  while (std::getline(hist, line)) ++rows;
  CHECK(rows == 3);

  CliResult r2 = run_cli("train ae --data " + corpus.string() + " --config " + cfg.string() +
                             " --out " + ck2.string(),
                         dir.path);
  CHECK(r2.code == 0);
  CHECK(slurp(ck1) == slurp(ck2));
  CHECK(slurp(ck1.string() + ".history.csv") == slurp(ck2.string() + ".history.csv"));
}

TEST_CASE("cli train lip catches bottleneck mismatches with exit 1") {
  TempDir dir("cli_train_lip");
  const auto corpus = dir.path / "corpus";
  run_cli("synth --out " + corpus.string() + " --count 3 --seed 4 --duration 0.4", dir.path);
  const auto ae_cfg = dir.path / "ae.json";
  write_text(ae_cfg, kTinyAeConfig);
  const auto ae_ckpt = dir.path / "ae.ckpt";
  CHECK(run_cli("train ae --data " + corpus.string() + " --config " + ae_cfg.string() +
                    " --out " + ae_ckpt.string(),
                dir.path)
            .code == 0);

  const auto lip_cfg = dir.path / "lip.json";
  write_text(lip_cfg, R"({
    "lr": 0.001, "batch_size": 4, "epochs": 1, "seed": 6,
    "net": {"h": 32, "w": 32, "bottleneck": 16}
  })");
  CliResult r = run_cli("train lip --data " + corpus.string() + " --config " +
                            lip_cfg.string() + " --out " + (dir.path / "lip.ckpt").string() +
                            " --ae " + ae_ckpt.string(),
                        dir.path);
  CHECK(r.code == 1);
  CHECK(r.err.find("bottleneck") != std::string::npos);
}

TEST_CASE("cli predict requires --ae") {
  TempDir dir("cli_predict_usage");
  CliResult r = run_cli("predict --frames x.vfrm --lip l.ckpt --out o.wav", dir.path);
  CHECK(r.code == 2);
}

TEST_CASE("cli eval: self comparison and id mismatch") {
  TempDir dir("cli_eval");
  const auto ref = dir.path / "ref";
  const auto test = dir.path / "test";
  std::filesystem::create_directories(ref);
  std::filesystem::create_directories(test);
  // Two matched ids.
  for (int i = 0; i < 2; ++i) {
    const SynthPair p = synth_pair(100 + i, 0.6);
    write_wav(ref / ("u" + std::to_string(i) + ".wav"), p.wav);
    write_wav(test / ("u" + std::to_string(i) + ".wav"), p.wav);
  }
  const auto report = dir.path / "report.json";
  CliResult r = run_cli("eval --ref " + ref.string() + " --test " + test.string() + " --out " +
                            report.string(),
                        dir.path);
  CHECK(r.code == 0);
  std::ifstream is(report);
  nlohmann::json j;
  is >> j;
  CHECK(j["mean"]["corr2d"].get<double>() == doctest::Approx(1.0));
  CHECK(j["mean"]["stmi"].get<double>() == doctest::Approx(1.0));
  CHECK(j["mean"]["lsd_db"].get<double>() == doctest::Approx(0.0));
  CHECK(j["per_sample"].size() == 2);

  // Mismatched ids exit 1 and list the missing ones.
  const SynthPair extra = synth_pair(42, 0.6);
  write_wav(test / "extra.wav", extra.wav);
  CliResult bad = run_cli("eval --ref " + ref.string() + " --test " + test.string() +
                              " --out " + report.string(),
                          dir.path);
  CHECK(bad.code == 1);
  CHECK(bad.err.find("extra") != std::string::npos);

  // Empty intersection exits 1 too.
  TempDir empty("cli_eval_empty");
  const auto none = empty.path / "none";
  std::filesystem::create_directories(none);
  CliResult r2 = run_cli("eval --ref " + none.string() + " --test " + test.string() +
                             " --out " + report.string(),
                         dir.path);
  CHECK(r2.code == 1);
}

TEST_CASE("cli unknown flags are rejected") {
  TempDir dir("cli_unknown");
  CHECK(run_cli("synth --out x --count 1 --frobnicate", dir.path).code == 2);
  CHECK(run_cli("nonsense", dir.path).code == 2);
}
