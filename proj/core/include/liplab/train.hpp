// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training loops for both networks: CorrMSE objective, Adam with the
// plateau schedule, per-epoch augmentation, seeded end-to-end.
#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "liplab/audspec.hpp"
#include "liplab/datapipe.hpp"
#include "liplab/losses.hpp"
#include "liplab/nets.hpp"
#include "liplab/optim.hpp"
#include "liplab/rng.hpp"
#include "liplab/tensor.hpp"

namespace liplab {

struct TrainConfig {
  LossKind loss_kind = LossKind::kCorrMse;
  double lambda = 1.0;
  double lr = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  int patience = 4;
  double lr_factor = 5.0;
  std::uint64_t seed = 0;
  double split_train = 0.90, split_val = 0.05, split_test = 0.05;
  NetConfig net;
  BottleneckReg ae_reg = BottleneckReg::kNoise;
  bool augment_enabled = true;

  static TrainConfig autoencoder_defaults() { return {}; }

  static TrainConfig lipreader_defaults() {
    TrainConfig c;
    c.batch_size = 32;
    c.epochs = 150;
    return c;
  }

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& defaults);
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainRun {
  std::vector<EpochStats> history;
  std::uint64_t seed = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;  // 1-based
  std::size_t degenerate_losses = 0;
  nlohmann::json config_snapshot;
};

// CSV with header epoch,train_loss,val_loss,lr; byte-stable formatting.
void write_history_csv(const std::filesystem::path& path, const TrainRun& run);

// ---- autoencoder ----

// All compressed spectrogram frames of a corpus, stacked [M,128].
TensorF collect_compressed_frames(const std::filesystem::path& dir,
                                  const std::vector<ManifestEntry>& manifest);

struct AeTrainResult {
  Autoencoder<float> model;  // best-validation weights
  TrainRun run;
};

// Trains on a frame-level shuffled split of `frames` per the config
// fractions; minimizes the configured loss between each frame and its
// reconstruction.
AeTrainResult train_autoencoder(const TensorF& frames, const TrainConfig& cfg);

// Held-out reconstruction fidelity in the decompressed (power-3) domain.
double ae_reconstruction_corr2d(Autoencoder<float>& ae, const TensorF& frames);

// Same measure with codes perturbed by N(0, sigma^2) between encode and
// decode; probes decoder robustness.
double ae_perturbed_corr2d(Autoencoder<float>& ae, const TensorF& frames, double sigma,
                           std::uint64_t seed);

// Frame-level split used by train_autoencoder, exposed so evaluations can
// address the same held-out frames.
void split_frames(const TensorF& frames, const TrainConfig& cfg, TensorF* train,
                  TensorF* val, TensorF* test);

// ---- lip reader ----

struct LipSliceSet {
  std::vector<TensorF> video;  // [3,H,W,Lv]
  std::vector<TensorF> codes;  // [La*B] noiseless encoder targets
  std::vector<TensorF> spec;   // [La,128] compressed ground-truth slices
  std::size_t size() const { return video.size(); }
};

struct LipCorpus {
  LipSliceSet train, val, test;
};

// Prepares paired slices for every manifest entry: video -> preprocess ->
// derivatives -> slices; audio -> auditory spectrogram -> cube-root ->
// noiseless bottleneck codes -> slices. Splits follow the manifest.
LipCorpus prepare_lip_corpus(const std::filesystem::path& dir,
                             const std::vector<ManifestEntry>& manifest,
                             Autoencoder<float>& ae, const NetConfig& net);

// With probability 1/2 mirrors the W axis of all channels, otherwise adds
// N(0, 0.02^2) pixel noise.
TensorF augment(const TensorF& slice, Rng& rng);

struct LipTrainResult {
  LipReader<float> model;  // best-validation weights
  TrainRun run;
};

LipTrainResult train_lipreader(const LipCorpus& corpus, Autoencoder<float>& ae,
                               const TrainConfig& cfg);

// Predictions decoded through the frozen decoder and compared against the
// true spectrogram slices in the decompressed domain (stacked Corr2D).
double lip_decoded_corr2d(LipReader<float>& lip, Autoencoder<float>& ae,
                          const LipSliceSet& set);

// Stacked Corr2D between predicted and target bottleneck sequences.
double lip_code_corr2d(LipReader<float>& lip, const LipSliceSet& set);

}  // namespace liplab
