// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#include "liplab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "liplab/metrics.hpp"
#include "liplab/wav_io.hpp"

namespace liplab {
namespace {

std::string reg_to_string(BottleneckReg r) {
  switch (r) {
    case BottleneckReg::kNoise: return "noise";
    case BottleneckReg::kDropout: return "dropout";
    default: return "none";
  }
}

BottleneckReg reg_from_string(const std::string& s) {
  if (s == "noise") return BottleneckReg::kNoise;
  if (s == "dropout") return BottleneckReg::kDropout;
  if (s == "none") return BottleneckReg::kNone;
  throw std::invalid_argument("unknown ae_reg: " + s);
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.below(i)]);
  }
}

// One optimizer step over bound params; conv kernels carry the L2 flag.
void apply_adam(AdamState<float>& adam, Graph<float>& g, ParamBind<float>& bind,
                const AdamConfig& acfg, float l2) {
  adam.begin_step();
  for (auto& p : bind) {
    adam.update(p.name, *p.storage, g.grad(p.var), acfg, p.l2 ? l2 : 0.0f);
  }
}

TensorF gather_rows(const TensorF& frames, const std::vector<std::size_t>& idx,
                    std::size_t begin, std::size_t end) {
  const std::size_t d = frames.dim(1);
  TensorF out({end - begin, d});
  for (std::size_t i = begin; i < end; ++i) {
    std::copy_n(frames.data() + idx[i] * d, d, out.data() + (i - begin) * d);
  }
  return out;
}

double batch_mean_loss(const std::vector<std::pair<double, std::size_t>>& parts) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& [loss, count] : parts) {
    acc += loss * static_cast<double>(count);
    n += count;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

TensorD cube(const TensorF& m) {
  TensorD out(m.shape());
  for (std::size_t i = 0; i < m.numel(); ++i) {
    const double v = m[i];
    out[i] = v * v * v;
  }
  return out;
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return {{"loss", {{"kind", to_string(loss_kind)}, {"lambda", lambda}}},
          {"lr", lr},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"patience", patience},
          {"lr_factor", lr_factor},
          {"seed", seed},
          {"split", {{"train", split_train}, {"val", split_val}, {"test", split_test}}},
          {"ae_reg", reg_to_string(ae_reg)},
          {"augment", augment_enabled},
          {"net", net.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    if (l.contains("kind")) c.loss_kind = loss_kind_from_string(l.at("kind").get<std::string>());
    c.lambda = l.value("lambda", c.lambda);
  }
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.patience = j.value("patience", c.patience);
  c.lr_factor = j.value("lr_factor", c.lr_factor);
  c.seed = j.value("seed", c.seed);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split_train = s.value("train", c.split_train);
    c.split_val = s.value("val", c.split_val);
    c.split_test = s.value("test", c.split_test);
  }
  if (j.contains("ae_reg")) c.ae_reg = reg_from_string(j.at("ae_reg").get<std::string>());
  c.augment_enabled = j.value("augment", c.augment_enabled);
  if (j.contains("net")) c.net = NetConfig::from_json(j.at("net"));
  if (c.batch_size == 0 || c.epochs == 0) {
    throw std::invalid_argument("train config: batch_size and epochs must be positive");
  }
  if (c.lambda < 0 || c.lr <= 0 || c.lr_factor <= 1.0 || c.patience < 1) {
    throw std::invalid_argument("train config: invalid optimizer settings");
  }
  return c;
}

void write_history_csv(const std::filesystem::path& path, const TrainRun& run) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write history: " + path.string());
  os << "epoch,train_loss,val_loss,lr\n";
  char buf[128];
  for (std::size_t e = 0; e < run.history.size(); ++e) {
    const EpochStats& s = run.history[e];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", e + 1, s.train_loss, s.val_loss,
                  s.lr);
    os << buf;
  }
}

TensorF collect_compressed_frames(const std::filesystem::path& dir,
                                  const std::vector<ManifestEntry>& manifest) {
  std::vector<TensorF> per_sample(manifest.size());
  parallel_for(manifest.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Waveform w = read_wav(dir / manifest[i].wav);
      if (w.sample_rate != 8000) w = resample(w, 8000);
      const AudSpec spec = compress(wav2aud(w));
      per_sample[i] = spec.frames.cast<float>();
    }
  });
  std::size_t total = 0;
  for (const auto& t : per_sample) total += t.dim(0);
  if (total == 0) throw std::invalid_argument("collect_compressed_frames: empty corpus");
  TensorF out({total, 128});
  std::size_t row = 0;
  for (const auto& t : per_sample) {
    std::copy_n(t.data(), t.numel(), out.data() + row * 128);
    row += t.dim(0);
  }
  return out;
}

void split_frames(const TensorF& frames, const TrainConfig& cfg, TensorF* train,
                  TensorF* val, TensorF* test) {
  const std::size_t m = frames.dim(0);
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i;
  Rng rng(derive_seed(cfg.seed, 0x5417));
  shuffle_indices(idx, rng);
  const auto n_val = static_cast<std::size_t>(std::floor(m * cfg.split_val));
  const auto n_test = static_cast<std::size_t>(std::floor(m * cfg.split_test));
  if (m <= n_val + n_test) throw std::invalid_argument("split_frames: corpus too small");
  if (val) *val = gather_rows(frames, idx, 0, n_val);
  if (test) *test = gather_rows(frames, idx, n_val, n_val + n_test);
  if (train) *train = gather_rows(frames, idx, n_val + n_test, m);
}

AeTrainResult train_autoencoder(const TensorF& frames, const TrainConfig& cfg) {
  if (frames.ndim() != 2 || frames.dim(1) != 128) {
    throw std::invalid_argument("train_autoencoder: frames must be [M,128]");
  }
  TensorF train, val, test;
  split_frames(frames, cfg, &train, &val, &test);
  if (train.dim(0) < 2) throw std::invalid_argument("train_autoencoder: empty corpus");

  auto model = Autoencoder<float>::build(cfg.net, derive_seed(cfg.seed, 2), cfg.ae_reg);
  AdamState<float> adam;
  PlateauState plateau;
  plateau.lr = cfg.lr;
  plateau.patience = cfg.patience;
  plateau.factor = cfg.lr_factor;

  TrainRun run;
  run.seed = cfg.seed;
  run.config_snapshot = cfg.to_json();
  Checkpoint best = model.to_checkpoint();

  const std::size_t n_train = train.dim(0);
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  auto eval_loss = [&](const TensorF& set) {
    std::vector<std::pair<double, std::size_t>> parts;
    for (std::size_t b = 0; b < set.dim(0); b += cfg.batch_size) {
      const std::size_t e = std::min(set.dim(0), b + cfg.batch_size);
      TensorF x({e - b, 128});
      std::copy_n(set.data() + b * 128, (e - b) * 128, x.data());
      Graph<float> g;
      Var<float> out = model.forward_node(g, g.constant(x), Mode::kInfer, 0);
      Var<float> loss = loss_node<float>(g, out, x, cfg.loss_kind, float(cfg.lambda));
      parts.emplace_back(g.value(loss)[0], e - b);
    }
    return batch_mean_loss(parts);
  };

  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng erng(derive_seed(cfg.seed, 0xE90C + epoch));
    shuffle_indices(order, erng);
    std::vector<std::pair<double, std::size_t>> parts;
    for (std::size_t b = 0; b < n_train; b += cfg.batch_size) {
      const std::size_t e = std::min(n_train, b + cfg.batch_size);
      if (e - b < 2) continue;  // batch norm needs two samples
      TensorF x = gather_rows(train, order, b, e);
      Graph<float> g;
      ParamBind<float> bind;
      Var<float> out = model.forward_node(g, g.constant(x), Mode::kTrain,
                                          derive_seed(cfg.seed, 0xBA7C + step), &bind);
      Var<float> loss =
          loss_node<float>(g, out, x, cfg.loss_kind, float(cfg.lambda), &run.degenerate_losses);
      const double lv = g.value(loss)[0];
      if (!std::isfinite(lv)) {
        throw std::runtime_error("train_autoencoder: loss diverged (NaN/inf) at epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(step));
      }
      g.backward(loss);
      AdamConfig acfg;
      acfg.lr = plateau.lr;
      apply_adam(adam, g, bind, acfg, float(cfg.net.l2));
      parts.emplace_back(lv, e - b);
      ++step;
    }
    EpochStats stats;
    stats.train_loss = batch_mean_loss(parts);
    stats.val_loss = val.numel() ? eval_loss(val) : stats.train_loss;
    stats.lr = plateau.lr;
    run.history.push_back(stats);
    if (stats.val_loss < run.best_val) {
      run.best_val = stats.val_loss;
      run.best_epoch = epoch;
      best = model.to_checkpoint();
    }
    plateau_update(plateau, stats.val_loss);
  }
  model.from_checkpoint(best);
  return {std::move(model), std::move(run)};
}

double ae_reconstruction_corr2d(Autoencoder<float>& ae, const TensorF& frames) {
  const TensorF rec = ae.reconstruct(frames);
  return corr2d(cube(rec), cube(frames));
}

double ae_perturbed_corr2d(Autoencoder<float>& ae, const TensorF& frames, double sigma,
                           std::uint64_t seed) {
  TensorF codes = ae.encode(frames);
  Rng rng(derive_seed(seed, 0x9E27));
  for (std::size_t i = 0; i < codes.numel(); ++i) {
    codes[i] += static_cast<float>(sigma * rng.gaussian());
  }
  const TensorF rec = ae.decode(codes);
  return corr2d(cube(rec), cube(frames));
}

LipCorpus prepare_lip_corpus(const std::filesystem::path& dir,
                             const std::vector<ManifestEntry>& manifest,
                             Autoencoder<float>& ae, const NetConfig& net) {
  if (ae.config().bottleneck != net.bottleneck) {
    throw std::invalid_argument(
        "prepare_lip_corpus: bottleneck mismatch (autoencoder " +
        std::to_string(ae.config().bottleneck) + ", config " +
        std::to_string(net.bottleneck) + ")");
  }
  LipCorpus corpus;
  for (const ManifestEntry& m : manifest) {
    Waveform w = read_wav(dir / m.wav);
    if (w.sample_rate != 8000) w = resample(w, 8000);
    const TensorF spec = compress(wav2aud(w)).frames.cast<float>();

    FrameSequence video = preprocess(read_frames(dir / m.frames), net.h, net.w);
    const TensorF deriv = derivatives(video);

    std::size_t k = 0;
    pair_slice_count(deriv.dim(3), net.lv, spec.dim(0), net.la, &k);

    // Noiseless bottleneck targets for exactly the frames the slices use.
    TensorF used({k * net.la, 128});
    std::copy_n(spec.data(), used.numel(), used.data());
    const TensorF codes = ae.encode(used);

    std::vector<TensorF> vslices = slice_video(deriv, net.lv);
    std::vector<TensorF> cslices = slice_codes(codes, net.la);

    LipSliceSet* set = &corpus.train;
    if (m.split == "val") set = &corpus.val;
    if (m.split == "test") set = &corpus.test;
    for (std::size_t s = 0; s < k; ++s) {
      set->video.push_back(std::move(vslices[s]));
      set->codes.push_back(std::move(cslices[s]));
      TensorF truth({net.la, 128});
      std::copy_n(spec.data() + s * net.la * 128, truth.numel(), truth.data());
      set->spec.push_back(std::move(truth));
    }
  }
  return corpus;
}

TensorF augment(const TensorF& slice, Rng& rng) {
  if (slice.ndim() != 4) throw std::invalid_argument("augment: expected [3,H,W,Lv]");
  const std::size_t c = slice.dim(0), h = slice.dim(1), w = slice.dim(2), lv = slice.dim(3);
  TensorF out(slice.shape());
  if (rng.uniform() < 0.5) {
    // Horizontal flip of every channel; temporal differentiation commutes
    // with the mirror, so the derivative channels just mirror too.
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const float* src = slice.data() + ((ci * h + y) * w + (w - 1 - x)) * lv;
          float* dst = out.data() + ((ci * h + y) * w + x) * lv;
          std::copy_n(src, lv, dst);
        }
  } else {
    constexpr double kAugmentNoiseStd = 0.02;
    for (std::size_t i = 0; i < slice.numel(); ++i) {
      out[i] = slice[i] + static_cast<float>(kAugmentNoiseStd * rng.gaussian());
    }
  }
  return out;
}

LipTrainResult train_lipreader(const LipCorpus& corpus, Autoencoder<float>& ae,
                               const TrainConfig& cfg) {
  if (corpus.train.size() == 0) throw std::invalid_argument("train_lipreader: empty train set");
  if (ae.config().bottleneck != cfg.net.bottleneck) {
    throw std::invalid_argument("train_lipreader: bottleneck mismatch (autoencoder " +
                                std::to_string(ae.config().bottleneck) + ", config " +
                                std::to_string(cfg.net.bottleneck) + ")");
  }
  const std::size_t target_w = 32 * cfg.net.la;
  for (const TensorF& t : corpus.train.codes) {
    if (t.numel() != target_w) {
      throw std::invalid_argument("train_lipreader: target width " +
                                  std::to_string(t.numel()) + ", expected " +
                                  std::to_string(target_w));
    }
  }

  auto model = LipReader<float>::build(cfg.net, derive_seed(cfg.seed, 2));
  AdamState<float> adam;
  PlateauState plateau;
  plateau.lr = cfg.lr;
  plateau.patience = cfg.patience;
  plateau.factor = cfg.lr_factor;

  TrainRun run;
  run.seed = cfg.seed;
  run.config_snapshot = cfg.to_json();
  Checkpoint best = model.to_checkpoint();

  const std::size_t n_train = corpus.train.size();
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  auto assemble = [&](const LipSliceSet& set, const std::vector<std::size_t>& idx,
                      std::size_t b, std::size_t e, Rng* aug_rng) {
    const auto& shape = set.video[0].shape();
    TensorF x({e - b, shape[0], shape[1], shape[2], shape[3]});
    TensorF y({e - b, target_w});
    const std::size_t vlen = set.video[0].numel();
    for (std::size_t i = b; i < e; ++i) {
      const TensorF* v = &set.video[idx[i]];
      TensorF augmented;
      if (aug_rng) {
        augmented = augment(*v, *aug_rng);
        v = &augmented;
      }
      std::copy_n(v->data(), vlen, x.data() + (i - b) * vlen);
      std::copy_n(set.codes[idx[i]].data(), target_w, y.data() + (i - b) * target_w);
    }
    return std::make_pair(std::move(x), std::move(y));
  };

  auto eval_loss = [&](const LipSliceSet& set) {
    if (set.size() == 0) return std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> idx(set.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<std::pair<double, std::size_t>> parts;
    for (std::size_t b = 0; b < set.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(set.size(), b + cfg.batch_size);
      auto [x, y] = assemble(set, idx, b, e, nullptr);
      Graph<float> g;
      Var<float> out = model.forward_node(g, g.constant(x), Mode::kInfer, 0);
      Var<float> loss = loss_node<float>(g, out, y, cfg.loss_kind, float(cfg.lambda));
      parts.emplace_back(g.value(loss)[0], e - b);
    }
    return batch_mean_loss(parts);
  };

  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng erng(derive_seed(cfg.seed, 0xE90C + epoch));
    shuffle_indices(order, erng);
    Rng aug_rng(derive_seed(derive_seed(cfg.seed, 0xA06), epoch));
    std::vector<std::pair<double, std::size_t>> parts;
    for (std::size_t b = 0; b < n_train; b += cfg.batch_size) {
      const std::size_t e = std::min(n_train, b + cfg.batch_size);
      if (e - b < 2) continue;
      auto [x, y] =
          assemble(corpus.train, order, b, e, cfg.augment_enabled ? &aug_rng : nullptr);
      Graph<float> g;
      ParamBind<float> bind;
      Var<float> out = model.forward_node(g, g.constant(x), Mode::kTrain,
                                          derive_seed(cfg.seed, 0xBA7C + step), &bind);
      Var<float> loss =
          loss_node<float>(g, out, y, cfg.loss_kind, float(cfg.lambda), &run.degenerate_losses);
      const double lv = g.value(loss)[0];
      if (!std::isfinite(lv)) {
        throw std::runtime_error("train_lipreader: loss diverged (NaN/inf) at epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(step));
      }
      g.backward(loss);
      AdamConfig acfg;
      acfg.lr = plateau.lr;
      apply_adam(adam, g, bind, acfg, float(cfg.net.l2));
      parts.emplace_back(lv, e - b);
      ++step;
    }
    EpochStats stats;
    stats.train_loss = batch_mean_loss(parts);
    const double vloss = eval_loss(corpus.val);
    stats.val_loss = std::isnan(vloss) ? stats.train_loss : vloss;
    stats.lr = plateau.lr;
    run.history.push_back(stats);
    if (stats.val_loss < run.best_val) {
      run.best_val = stats.val_loss;
      run.best_epoch = epoch;
      best = model.to_checkpoint();
    }
    plateau_update(plateau, stats.val_loss);
  }
  model.from_checkpoint(best);
  return {std::move(model), std::move(run)};
}

namespace {

TensorF predict_codes(LipReader<float>& lip, const LipSliceSet& set) {
  const std::size_t n = set.size();
  const std::size_t w = 32 * lip.config().la;
  TensorF out({n, w});
  const std::size_t batch = 32;
  const auto& shape = set.video[0].shape();
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    TensorF x({e - b, shape[0], shape[1], shape[2], shape[3]});
    const std::size_t vlen = set.video[0].numel();
    for (std::size_t i = b; i < e; ++i)
      std::copy_n(set.video[i].data(), vlen, x.data() + (i - b) * vlen);
    const TensorF y = lip.forward(x);
    std::copy_n(y.data(), y.numel(), out.data() + b * w);
  }
  return out;
}

}  // namespace

double lip_decoded_corr2d(LipReader<float>& lip, Autoencoder<float>& ae,
                          const LipSliceSet& set) {
  if (set.size() == 0) throw std::invalid_argument("lip_decoded_corr2d: empty set");
  const std::size_t la = lip.config().la;
  const std::size_t b = ae.config().bottleneck;
  const TensorF pred = predict_codes(lip, set);

  TensorF decoded({set.size() * la, 128});
  TensorF truth({set.size() * la, 128});
  for (std::size_t i = 0; i < set.size(); ++i) {
    TensorF codes({la, b});
    std::copy_n(pred.data() + i * la * b, la * b, codes.data());
    const TensorF rec = ae.decode(codes);
    std::copy_n(rec.data(), rec.numel(), decoded.data() + i * la * 128);
    std::copy_n(set.spec[i].data(), set.spec[i].numel(), truth.data() + i * la * 128);
  }
  return corr2d(cube(decoded), cube(truth));
}

double lip_code_corr2d(LipReader<float>& lip, const LipSliceSet& set) {
  if (set.size() == 0) throw std::invalid_argument("lip_code_corr2d: empty set");
  const TensorF pred = predict_codes(lip, set);
  TensorF target({set.size(), pred.dim(1)});
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::copy_n(set.codes[i].data(), pred.dim(1), target.data() + i * pred.dim(1));
  }
  return corr2d(pred, target);
}

}  // namespace liplab
