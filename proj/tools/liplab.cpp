// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
//
// liplab command line: synthesize paired corpora, encode/decode auditory
// spectrograms, train both networks, predict speech from silent video,
// and evaluate reconstructions.
//
// Exit codes: 0 success, 1 runtime/data failure, 2 usage error.
// stdout carries machine-readable results; stderr carries diagnostics.
#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "liplab/audspec.hpp"
#include "liplab/datapipe.hpp"
#include "liplab/metrics.hpp"
#include "liplab/nets.hpp"
#include "liplab/train.hpp"
#include "liplab/wav_io.hpp"

namespace fs = std::filesystem;
using namespace liplab;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path.string());
  nlohmann::json j;
  is >> j;
  return j;
}

int run_synth(const std::string& out_dir, std::size_t count, std::uint64_t seed,
              double duration) {
  const double segs = duration / 0.2;
  if (duration <= 0 || std::abs(segs - std::llround(segs)) > 1e-9) {
    throw UsageError("--duration must be a positive multiple of 0.2 s");
  }
  const auto entries = build_dataset(count, seed, out_dir, duration);
  std::size_t train = 0, val = 0, test = 0;
  for (const auto& e : entries) {
    if (e.split == "train") ++train;
    if (e.split == "val") ++val;
    if (e.split == "test") ++test;
  }
  std::cerr << "wrote " << entries.size() << " samples to " << out_dir << "\n";
  std::cout << "{\"samples\":" << entries.size() << ",\"train\":" << train
            << ",\"val\":" << val << ",\"test\":" << test << "}\n";
  return 0;
}

int run_audspec_encode(const std::string& in, const std::string& out,
                       const AudSpecParams& params) {
  Waveform w = read_wav(in);
  if (w.sample_rate != 8000) {
    std::cerr << "resampling " << w.sample_rate << " Hz -> 8000 Hz\n";
    w = resample(w, 8000);
  }
  const AudSpec spec = wav2aud(w, params);
  write_audspec(out, spec);
  std::cout << "{\"frames\":" << spec.n_frames() << ",\"channels\":128}\n";
  return 0;
}

int run_audspec_decode(const std::string& in, const std::string& out, std::size_t iters,
                       std::uint64_t seed) {
  const AudSpec spec = read_audspec(in);
  InversionInfo info;
  const Waveform w = aud2wav(spec, iters, seed, &info);
  write_wav(out, w);
  std::cerr << "round-trip corr2d " << info.best_corr2d << " (best iterate "
            << info.best_iter << "/" << iters << ")\n";
  std::cout << "{\"samples\":" << w.samples.size() << ",\"corr2d\":" << info.best_corr2d
            << "}\n";
  return 0;
}

int run_train_ae(const std::string& data, const std::string& config,
                 const std::string& out) {
  const TrainConfig cfg =
      TrainConfig::from_json(read_json_file(config), TrainConfig::autoencoder_defaults());
  const auto manifest = read_manifest(data);
  std::cerr << "collecting spectrogram frames from " << manifest.size() << " samples\n";
  const TensorF frames = collect_compressed_frames(data, manifest);
  std::cerr << "training on " << frames.dim(0) << " frames\n";
  AeTrainResult result = train_autoencoder(frames, cfg);
  result.model.save(out);
  write_history_csv(out + ".history.csv", result.run);
  std::cout << "{\"final_val_loss\":" << result.run.history.back().val_loss
            << ",\"best_val_loss\":" << result.run.best_val
            << ",\"best_epoch\":" << result.run.best_epoch << "}\n";
  return 0;
}

int run_train_lip(const std::string& data, const std::string& config,
                  const std::string& out, const std::string& ae_path) {
  const TrainConfig cfg =
      TrainConfig::from_json(read_json_file(config), TrainConfig::lipreader_defaults());
  auto ae = Autoencoder<float>::load(ae_path);
  const auto manifest = read_manifest(data);
  std::cerr << "preparing paired slices from " << manifest.size() << " samples\n";
  const LipCorpus corpus = prepare_lip_corpus(data, manifest, ae, cfg.net);
  std::cerr << "slices: train " << corpus.train.size() << ", val " << corpus.val.size()
            << ", test " << corpus.test.size() << "\n";
  LipTrainResult result = train_lipreader(corpus, ae, cfg);
  result.model.save(out);
  write_history_csv(out + ".history.csv", result.run);
  std::cout << "{\"final_val_loss\":" << result.run.history.back().val_loss
            << ",\"best_val_loss\":" << result.run.best_val
            << ",\"best_epoch\":" << result.run.best_epoch << "}\n";
  return 0;
}

int run_predict(const std::string& frames_path, const std::string& lip_path,
                const std::string& ae_path, const std::string& out, std::size_t iters,
                std::uint64_t seed) {
  auto lip = LipReader<float>::load(lip_path);
  auto ae = Autoencoder<float>::load(ae_path);
  const NetConfig& net = lip.config();
  if (ae.config().bottleneck != net.bottleneck) {
    throw std::runtime_error("bottleneck mismatch: lip reader expects " +
                             std::to_string(net.bottleneck) + ", autoencoder has " +
                             std::to_string(ae.config().bottleneck));
  }

  const FrameSequence raw = read_frames(frames_path);
  const FrameSequence video = preprocess(raw, net.h, net.w);
  const TensorF deriv = derivatives(video);
  const std::vector<TensorF> slices = slice_video(deriv, net.lv);
  if (slices.empty()) {
    throw std::runtime_error("input has " + std::to_string(video.t) +
                             " frames, fewer than one slice of " + std::to_string(net.lv));
  }
  std::cerr << slices.size() << " slices -> " << slices.size() * net.la
            << " spectrogram frames\n";

  TensorF spec_c({slices.size() * net.la, 128});
  for (std::size_t s = 0; s < slices.size(); ++s) {
    const auto& sh = slices[s].shape();
    TensorF x({1, sh[0], sh[1], sh[2], sh[3]});
    std::copy_n(slices[s].data(), slices[s].numel(), x.data());
    const TensorF out_row = lip.forward(x);
    TensorF codes({net.la, net.bottleneck});
    std::copy_n(out_row.data(), out_row.numel(), codes.data());
    const TensorF rec = ae.decode(codes);
    std::copy_n(rec.data(), rec.numel(), spec_c.data() + s * net.la * 128);
  }

  AudSpec compressed;
  compressed.frames = spec_c.cast<double>();
  for (std::size_t i = 0; i < compressed.frames.numel(); ++i) {
    if (compressed.frames[i] < 0) compressed.frames[i] = 0;  // LeakyReLU tail
  }
  const AudSpec spec = decompress(compressed);
  InversionInfo info;
  const Waveform w = aud2wav(spec, iters, seed, &info);
  write_wav(out, w);
  std::cerr << "inversion corr2d " << info.best_corr2d << "\n";
  std::cout << "{\"samples\":" << w.samples.size() << ",\"frames\":" << spec.n_frames()
            << "}\n";
  return 0;
}

std::map<std::string, fs::path> spectrogram_sources(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".wav" || ext == ".auds") out[e.path().stem().string()] = e.path();
  }
  return out;
}

AudSpec load_spectrogram(const fs::path& path) {
  if (path.extension() == ".auds") return read_audspec(path);
  Waveform w = read_wav(path);
  if (w.sample_rate != 8000) w = resample(w, 8000);
  return wav2aud(w);
}

int run_eval(const std::string& ref_dir, const std::string& test_dir,
             const std::string& out) {
  const auto ref = spectrogram_sources(ref_dir);
  const auto test = spectrogram_sources(test_dir);
  std::vector<std::string> missing;
  for (const auto& [id, p] : ref) {
    if (!test.count(id)) missing.push_back(id + " (missing in test)");
  }
  for (const auto& [id, p] : test) {
    if (!ref.count(id)) missing.push_back(id + " (missing in ref)");
  }
  if (!missing.empty() || ref.empty()) {
    std::cerr << "id mismatch between " << ref_dir << " and " << test_dir << ":\n";
    for (const auto& m : missing) std::cerr << "  " << m << "\n";
    if (ref.empty()) std::cerr << "  (no .wav/.auds files in ref)\n";
    return 1;
  }

  std::vector<SampleMetrics> samples;
  for (const auto& [id, rpath] : ref) {
    const AudSpec a = load_spectrogram(rpath);
    const AudSpec b = load_spectrogram(test.at(id));
    const std::size_t t = std::min(a.n_frames(), b.n_frames());
    if (t < 2) throw std::runtime_error("sample " + id + " too short to evaluate");
    TensorD am({t, 128}), bm({t, 128});
    std::copy_n(a.frames.data(), t * 128, am.data());
    std::copy_n(b.frames.data(), t * 128, bm.data());
    SampleMetrics m;
    m.id = id;
    m.corr2d = corr2d(am, bm);
    m.stmi = stmi(am, bm, 1000.0 / a.params.frm_len);
    m.lsd_db = log_spectral_distance(am, bm);
    samples.push_back(m);
    std::cerr << id << ": corr2d " << m.corr2d << ", stmi " << m.stmi << ", lsd "
              << m.lsd_db << " dB\n";
  }
  const nlohmann::json report = metrics_report(
      samples, {{"ref", ref_dir}, {"test", test_dir}, {"trim", "common frame count"}});
  std::ofstream os(out, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write report: " + out);
  os << report.dump(2) << "\n";
  std::cout << report["mean"].dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auditory-spectrogram lip-to-speech pipeline"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic paired corpus");
  std::string synth_out;
  std::size_t synth_count = 0;
  std::uint64_t synth_seed = 0;
  double synth_duration = 3.0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "number of samples")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "master seed");
  synth->add_option("--duration", synth_duration, "utterance length in seconds");

  // audspec encode|decode
  auto* audspec_cmd = app.add_subcommand("audspec", "auditory spectrogram codec");
  audspec_cmd->require_subcommand(1);
  AudSpecParams params;
  auto* enc = audspec_cmd->add_subcommand("encode", "WAV -> AUDS");
  std::string enc_in, enc_out;
  enc->add_option("input", enc_in, "input WAV")->required();
  enc->add_option("output", enc_out, "output AUDS")->required();
  enc->add_option("--frmlen", params.frm_len, "frame length, ms");
  enc->add_option("--tc", params.tc, "integration time constant, ms");
  enc->add_option("--fac", params.fac, "hair-cell nonlinearity selector");
  enc->add_option("--shft", params.shft, "octave shift");
  auto* dec = audspec_cmd->add_subcommand("decode", "AUDS -> WAV");
  std::string dec_in, dec_out;
  std::size_t dec_iters = 50;
  std::uint64_t dec_seed = 7;
  dec->add_option("input", dec_in, "input AUDS")->required();
  dec->add_option("output", dec_out, "output WAV")->required();
  dec->add_option("--iters", dec_iters, "projection iterations")->check(CLI::PositiveNumber);
  dec->add_option("--seed", dec_seed, "initialization seed");

  // train ae|lip
  auto* train_cmd = app.add_subcommand("train", "train a network");
  train_cmd->require_subcommand(1);
  std::string train_data, train_config, train_out, train_ae_ckpt;
  auto* tae = train_cmd->add_subcommand("ae", "train the autoencoder");
  tae->add_option("--data", train_data, "corpus directory with manifest.json")->required();
  tae->add_option("--config", train_config, "training config JSON")->required();
  tae->add_option("--out", train_out, "output checkpoint")->required();
  auto* tlip = train_cmd->add_subcommand("lip", "train the lip reader");
  tlip->add_option("--data", train_data, "corpus directory with manifest.json")->required();
  tlip->add_option("--config", train_config, "training config JSON")->required();
  tlip->add_option("--out", train_out, "output checkpoint")->required();
  tlip->add_option("--ae", train_ae_ckpt, "pre-trained autoencoder checkpoint")->required();

  // predict
  auto* predict = app.add_subcommand("predict", "silent video -> speech WAV");
  std::string pred_frames, pred_lip, pred_ae, pred_out;
  std::size_t pred_iters = 50;
  std::uint64_t pred_seed = 7;
  predict->add_option("--frames", pred_frames, "input VFRM")->required();
  predict->add_option("--lip", pred_lip, "lip reader checkpoint")->required();
  predict->add_option("--ae", pred_ae, "autoencoder checkpoint")->required();
  predict->add_option("--out", pred_out, "output WAV")->required();
  predict->add_option("--iters", pred_iters, "inversion iterations")->check(CLI::PositiveNumber);
  predict->add_option("--seed", pred_seed, "inversion seed");

  // eval
  auto* eval = app.add_subcommand("eval", "metric battery over matched ids");
  std::string eval_ref, eval_test, eval_out;
  eval->add_option("--ref", eval_ref, "reference directory")->required();
  eval->add_option("--test", eval_test, "test directory")->required();
  eval->add_option("--out", eval_out, "report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return run_synth(synth_out, synth_count, synth_seed, synth_duration);
    if (*enc) return run_audspec_encode(enc_in, enc_out, params);
    if (*dec) return run_audspec_decode(dec_in, dec_out, dec_iters, dec_seed);
    if (*tae) return run_train_ae(train_data, train_config, train_out);
    if (*tlip) return run_train_lip(train_data, train_config, train_out, train_ae_ckpt);
    if (*predict) return run_predict(pred_frames, pred_lip, pred_ae, pred_out, pred_iters,
                                     pred_seed);
    if (*eval) return run_eval(eval_ref, eval_test, eval_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
