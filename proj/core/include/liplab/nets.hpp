// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
//
// The two networks: a denoising autoencoder over 128-bin spectrogram
// frames (dense 128-512-128-64-B-64-128, sigmoid bottleneck with additive
// noise) and the 3D-CNN + LSTM lip reader that regresses bottleneck code
// sequences from video slices.
#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "liplab/checkpoint.hpp"
#include "liplab/graph.hpp"
#include "liplab/rng.hpp"
#include "liplab/tensor.hpp"

namespace liplab {

struct NetConfig {
  std::size_t h = 128;
  std::size_t w = 128;
  std::size_t lv = 5;   // video frames per slice
  std::size_t la = 20;  // spectrogram frames per slice
  std::size_t bottleneck = 32;
  std::size_t mlp_hidden = 512;
  std::size_t lstm_units = 512;
  double noise_sigma = 0.05;
  double dropout_conv = 0.25;
  double dropout_rnn = 0.3;
  double l2 = 0.0005;
  double elu_alpha = 1.0;

  void validate() const {
    if (!h || !w || !lv || !la || !bottleneck || !mlp_hidden || !lstm_units) {
      throw std::invalid_argument("NetConfig: dimensions must be positive");
    }
    if (bottleneck > 128) throw std::invalid_argument("NetConfig: bottleneck must be <= 128");
    if (noise_sigma < 0 || dropout_conv < 0 || dropout_conv >= 1 || dropout_rnn < 0 ||
        dropout_rnn >= 1 || l2 < 0) {
      throw std::invalid_argument("NetConfig: invalid regularization settings");
    }
  }

  nlohmann::json to_json() const {
    return {{"h", h},
            {"w", w},
            {"lv", lv},
            {"la", la},
            {"bottleneck", bottleneck},
            {"mlp_hidden", mlp_hidden},
            {"lstm_units", lstm_units},
            {"noise_sigma", noise_sigma},
            {"dropout_conv", dropout_conv},
            {"dropout_rnn", dropout_rnn},
            {"l2", l2},
            {"elu_alpha", elu_alpha}};
  }

  static NetConfig from_json(const nlohmann::json& j) {
    NetConfig c;
    c.h = j.value("h", c.h);
    c.w = j.value("w", c.w);
    c.lv = j.value("lv", c.lv);
    c.la = j.value("la", c.la);
    c.bottleneck = j.value("bottleneck", c.bottleneck);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.lstm_units = j.value("lstm_units", c.lstm_units);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.dropout_conv = j.value("dropout_conv", c.dropout_conv);
    c.dropout_rnn = j.value("dropout_rnn", c.dropout_rnn);
    c.l2 = j.value("l2", c.l2);
    c.elu_alpha = j.value("elu_alpha", c.elu_alpha);
    c.validate();
    return c;
  }
};

// Zero-mean Gaussian with variance 2/fan_in.
template <typename T>
Tensor<T> he_init(std::vector<std::size_t> shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw std::invalid_argument("he_init: zero fan_in");
  Tensor<T> t(std::move(shape));
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = T(stddev * rng.gaussian());
  return t;
}

// One bound parameter: the model-owned tensor, its leaf var in the current
// graph, and whether the L2 penalty applies to it.
template <typename T>
struct BoundParam {
  std::string name;
  Tensor<T>* storage = nullptr;
  Var<T> var;
  bool l2 = false;
};

template <typename T>
using ParamBind = std::vector<BoundParam<T>>;

template <typename T>
Var<T> bind_param(Graph<T>& g, ParamBind<T>* bind, const std::string& name, Tensor<T>& t,
                  bool l2 = false) {
  if (!bind) return g.constant(t);
  Var<T> v = g.param(t);
  bind->push_back({name, &t, v, l2});
  return v;
}

namespace detail {

inline void require_tensor(const Checkpoint& c, const std::string& key,
                           const std::vector<std::size_t>& shape) {
  auto it = c.tensors.find(key);
  if (it == c.tensors.end()) {
    throw std::runtime_error("checkpoint missing tensor \"" + key + "\"");
  }
  if (it->second.shape() != shape) {
    throw std::runtime_error("checkpoint tensor \"" + key + "\" has shape " +
                             TensorF::shape_str(it->second.shape()) + ", expected " +
                             TensorF::shape_str(shape));
  }
}

template <typename T>
void store(Checkpoint& c, const std::string& key, const Tensor<T>& t) {
  c.tensors[key] = t.template cast<float>();
}

template <typename T>
void fetch(const Checkpoint& c, const std::string& key, Tensor<T>& t) {
  require_tensor(c, key, t.shape());
  t = c.tensors.at(key).template cast<T>();
}

}  // namespace detail

// Dense layer with pre-activation batch norm.
template <typename T>
struct DenseBn {
  Tensor<T> w, b, gamma, beta;
  BnStats<T> bn;

  static DenseBn init(std::size_t in, std::size_t out, std::uint64_t seed) {
    DenseBn d;
    d.w = he_init<T>({in, out}, in, seed);
    d.b = Tensor<T>::zeros({out});
    d.gamma = Tensor<T>::full({out}, T(1));
    d.beta = Tensor<T>::zeros({out});
    d.bn = BnStats<T>::init(out);
    return d;
  }

  Var<T> apply(Graph<T>& g, Var<T> x, Mode mode, const std::string& name,
               ParamBind<T>* bind) {
    Var<T> y = g.dense(x, bind_param(g, bind, name + "/w", w),
                       bind_param(g, bind, name + "/b", b));
    return g.batchnorm(y, bind_param(g, bind, name + "/gamma", gamma),
                       bind_param(g, bind, name + "/beta", beta), &bn, mode);
  }

  std::size_t trainable_count() const {
    return w.numel() + b.numel() + gamma.numel() + beta.numel();
  }

  void save(Checkpoint& c, const std::string& name) const {
    detail::store(c, name + "/w", w);
    detail::store(c, name + "/b", b);
    detail::store(c, name + "/gamma", gamma);
    detail::store(c, name + "/beta", beta);
    detail::store(c, name + "/bn_mean", bn.mean);
    detail::store(c, name + "/bn_var", bn.var);
  }

  void load(const Checkpoint& c, const std::string& name) {
    detail::fetch(c, name + "/w", w);
    detail::fetch(c, name + "/b", b);
    detail::fetch(c, name + "/gamma", gamma);
    detail::fetch(c, name + "/beta", beta);
    detail::fetch(c, name + "/bn_mean", bn.mean);
    detail::fetch(c, name + "/bn_var", bn.var);
  }
};

// Bottleneck regularizer used while training the autoencoder; additive
// Gaussian noise is the paper configuration, dropout is the ablation.
enum class BottleneckReg { kNoise, kDropout, kNone };

template <typename T>
class Autoencoder {
 public:
  static constexpr std::size_t kInputWidth = 128;

  static Autoencoder build(const NetConfig& cfg, std::uint64_t seed,
                           BottleneckReg reg = BottleneckReg::kNoise) {
    cfg.validate();
    Autoencoder m;
    m.cfg_ = cfg;
    m.reg_ = reg;
    const std::size_t b = cfg.bottleneck;
    std::uint64_t ctr = 0;
    auto next = [&] { return derive_seed(seed, ctr++); };
    m.enc_.push_back(DenseBn<T>::init(128, 512, next()));
    m.enc_.push_back(DenseBn<T>::init(512, 128, next()));
    m.enc_.push_back(DenseBn<T>::init(128, 64, next()));
    m.enc_.push_back(DenseBn<T>::init(64, b, next()));
    m.dec_.push_back(DenseBn<T>::init(b, 64, next()));
    m.dec_.push_back(DenseBn<T>::init(64, 128, next()));
    return m;
  }

  const NetConfig& config() const { return cfg_; }
  BottleneckReg reg() const { return reg_; }
  void set_reg(BottleneckReg r) { reg_ = r; }

  // Encoder stack up to (and including) the bottleneck sigmoid. Never
  // applies the bottleneck regularizer: code targets stay deterministic.
  Var<T> encode_node(Graph<T>& g, Var<T> x, Mode mode, ParamBind<T>* bind = nullptr) {
    if (g.value(x).ndim() != 2 || g.value(x).dim(1) != kInputWidth) {
      throw std::invalid_argument("autoencoder: input width must be 128");
    }
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      x = enc_[i].apply(g, x, mode, "ae/enc" + std::to_string(i), bind);
      x = i + 1 == enc_.size() ? g.sigmoid(x) : g.leaky_relu(x);
    }
    return x;
  }

  Var<T> decode_node(Graph<T>& g, Var<T> code, Mode mode, ParamBind<T>* bind = nullptr) {
    if (g.value(code).ndim() != 2 || g.value(code).dim(1) != cfg_.bottleneck) {
      throw std::invalid_argument("autoencoder: code width must be " +
                                  std::to_string(cfg_.bottleneck));
    }
    static const bool no_out_bn = std::getenv("LL_NO_OUT_BN") != nullptr;  // experiment hack
    Var<T> x = code;
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      const std::string name = "ae/dec" + std::to_string(i);
      if (no_out_bn && i + 1 == dec_.size()) {
        x = g.dense(x, bind_param(g, bind, name + "/w", dec_[i].w),
                    bind_param(g, bind, name + "/b", dec_[i].b));
      } else {
        x = dec_[i].apply(g, x, mode, name, bind);
      }
      x = g.leaky_relu(x);
    }
    return x;
  }

  // Full pass; in train mode the bottleneck regularizer sits between
  // encoder and decoder.
  Var<T> forward_node(Graph<T>& g, Var<T> x, Mode mode, std::uint64_t pass_seed,
                      ParamBind<T>* bind = nullptr) {
    Var<T> code = encode_node(g, x, mode, bind);
    if (mode == Mode::kTrain) {
      switch (reg_) {
        case BottleneckReg::kNoise:
          code = g.gaussian_noise(code, cfg_.noise_sigma, mode, derive_seed(pass_seed, 101));
          break;
        case BottleneckReg::kDropout:
          code = g.dropout(code, 0.25, mode, derive_seed(pass_seed, 101));
          break;
        case BottleneckReg::kNone:
          break;
      }
    }
    return decode_node(g, code, mode, bind);
  }

  Tensor<T> encode(const Tensor<T>& frames) {
    Graph<T> g;
    return g.value(encode_node(g, g.constant(frames), Mode::kInfer));
  }

  Tensor<T> decode(const Tensor<T>& codes) {
    Graph<T> g;
    return g.value(decode_node(g, g.constant(codes), Mode::kInfer));
  }

  Tensor<T> reconstruct(const Tensor<T>& frames) {
    Graph<T> g;
    return g.value(forward_node(g, g.constant(frames), Mode::kInfer, 0));
  }

  std::vector<std::pair<std::string, std::size_t>> layer_param_counts() const {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (std::size_t i = 0; i < enc_.size(); ++i)
      out.emplace_back("enc" + std::to_string(i), enc_[i].trainable_count());
    for (std::size_t i = 0; i < dec_.size(); ++i)
      out.emplace_back("dec" + std::to_string(i), dec_[i].trainable_count());
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, c] : layer_param_counts()) n += c;
    return n;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint c;
    for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].save(c, "ae/enc" + std::to_string(i));
    for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].save(c, "ae/dec" + std::to_string(i));
    return c;
  }

  void from_checkpoint(const Checkpoint& c) {
    for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].load(c, "ae/enc" + std::to_string(i));
    for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].load(c, "ae/dec" + std::to_string(i));
  }

  void save(const std::filesystem::path& path) const {
    save_checkpoint(path, to_checkpoint());
    std::ofstream os(path.string() + ".json");
    os << cfg_.to_json().dump(2) << "\n";
    if (!os) throw std::runtime_error("cannot write sidecar for " + path.string());
  }

  static Autoencoder load(const std::filesystem::path& path) {
    std::ifstream is(path.string() + ".json");
    if (!is) throw std::runtime_error("missing sidecar " + path.string() + ".json");
    nlohmann::json j;
    is >> j;
    Autoencoder m = build(NetConfig::from_json(j), 0, BottleneckReg::kNoise);
    m.from_checkpoint(load_checkpoint(path));
    return m;
  }

 private:
  NetConfig cfg_;
  BottleneckReg reg_ = BottleneckReg::kNoise;
  std::vector<DenseBn<T>> enc_, dec_;
};

template <typename T>
class LipReader {
 public:
  struct ConvStage {
    std::size_t filters;
    bool pool;
    bool elu;          // conv-block output uses ELU, the rest LeakyReLU
    bool dropout;      // dropout_conv after this stage
  };

  static std::vector<ConvStage> conv_plan() {
    return {{32, true, false, false}, {32, true, false, true},  {32, true, false, false},
            {64, false, false, false}, {64, true, false, true}, {128, false, false, true},
            {128, true, true, false}};
  }

  static LipReader build(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (cfg.h % 32 || cfg.w % 32) {
      throw std::invalid_argument("lipreader: H and W must be divisible by 32 (five pools)");
    }
    LipReader m;
    m.cfg_ = cfg;
    std::uint64_t ctr = 0;
    auto next = [&] { return derive_seed(seed, 0x11D + ctr++); };

    std::size_t in_ch = 3;
    for (const ConvStage& st : conv_plan()) {
      Conv c;
      c.k = he_init<T>({st.filters, in_ch, 3, 3, 3}, in_ch * 27, next());
      c.b = Tensor<T>::zeros({st.filters});
      c.gamma = Tensor<T>::full({st.filters}, T(1));
      c.beta = Tensor<T>::zeros({st.filters});
      c.bn = BnStats<T>::init(st.filters);
      m.conv_.push_back(std::move(c));
      in_ch = st.filters;
    }

    const std::size_t nf = m.feature_width();
    const std::size_t u = cfg.lstm_units;
    m.lstm_wx_ = he_init<T>({nf, 4 * u}, nf, next());
    m.lstm_wh_ = he_init<T>({u, 4 * u}, u, next());
    m.lstm_b_ = Tensor<T>::zeros({4 * u});
    for (std::size_t i = u; i < 2 * u; ++i) m.lstm_b_[i] = T(1);  // forget gate bias

    m.mlp_ = DenseBn<T>::init(cfg.lv * u, cfg.mlp_hidden, next());
    m.out_ = DenseBn<T>::init(cfg.mlp_hidden, 32 * cfg.la, next());
    return m;
  }

  const NetConfig& config() const { return cfg_; }

  // Flattened conv features per time step: 128 * (H/32) * (W/32).
  std::size_t feature_width() const { return 128 * (cfg_.h / 32) * (cfg_.w / 32); }
  std::size_t output_width() const { return 32 * cfg_.la; }

  // Per-layer output shapes as (C,H,W,T) plus the flat tail widths,
  // computable without running data.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> shape_chain() const {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> rows;
    std::size_t h = cfg_.h, w = cfg_.w;
    rows.emplace_back("input", std::vector<std::size_t>{3, h, w, cfg_.lv});
    const auto plan = conv_plan();
    std::size_t pools = 0;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      rows.emplace_back("conv" + std::to_string(i + 1),
                        std::vector<std::size_t>{plan[i].filters, h, w, cfg_.lv});
      if (plan[i].pool) {
        h /= 2;
        w /= 2;
        ++pools;
        rows.emplace_back("pool" + std::to_string(pools),
                          std::vector<std::size_t>{plan[i].filters, h, w, cfg_.lv});
      }
    }
    rows.emplace_back("reshape", std::vector<std::size_t>{cfg_.lv, feature_width()});
    rows.emplace_back("lstm", std::vector<std::size_t>{cfg_.lv, cfg_.lstm_units});
    rows.emplace_back("flatten", std::vector<std::size_t>{cfg_.lv * cfg_.lstm_units});
    rows.emplace_back("mlp", std::vector<std::size_t>{cfg_.mlp_hidden});
    rows.emplace_back("output", std::vector<std::size_t>{output_width()});
    return rows;
  }

  using ShapeTrace = std::vector<std::pair<std::string, std::vector<std::size_t>>>;

  Var<T> forward_node(Graph<T>& g, Var<T> x, Mode mode, std::uint64_t pass_seed,
                      ParamBind<T>* bind = nullptr, ShapeTrace* trace = nullptr) {
    const Tensor<T>& xv = g.value(x);
    if (xv.ndim() != 5 || xv.dim(1) != 3 || xv.dim(2) != cfg_.h || xv.dim(3) != cfg_.w ||
        xv.dim(4) != cfg_.lv) {
      throw std::invalid_argument(
          "lipreader: input must be [N,3," + std::to_string(cfg_.h) + "," +
          std::to_string(cfg_.w) + "," + std::to_string(cfg_.lv) + "], got " +
          Tensor<T>::shape_str(xv.shape()));
    }
    std::uint64_t drop_ctr = 0;
    auto drop_seed = [&] { return derive_seed(pass_seed, 0x2D0 + drop_ctr++); };
    auto record = [&](const std::string& name, Var<T> v) {
      if (trace) trace->emplace_back(name, g.value(v).shape());
    };
    record("input", x);

    const auto plan = conv_plan();
    std::size_t pools = 0;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const std::string name = "lip/conv" + std::to_string(i);
      Conv& c = conv_[i];
      x = g.conv3d_same(x, bind_param(g, bind, name + "/k", c.k, /*l2=*/true),
                        bind_param(g, bind, name + "/b", c.b));
      x = g.batchnorm(x, bind_param(g, bind, name + "/gamma", c.gamma),
                      bind_param(g, bind, name + "/beta", c.beta), &c.bn, mode);
      x = plan[i].elu ? g.elu(x, T(cfg_.elu_alpha)) : g.leaky_relu(x);
      record("conv" + std::to_string(i + 1), x);
      if (plan[i].pool) {
        x = g.maxpool3d(x, 2, 2, 1);
        record("pool" + std::to_string(++pools), x);
      }
      if (plan[i].dropout) x = g.dropout(x, cfg_.dropout_conv, mode, drop_seed());
    }

    x = g.time_major(x);  // [N, Lv, N_f]
    record("reshape", x);
    x = g.lstm_seq(x, bind_param(g, bind, "lip/lstm/wx", lstm_wx_),
                   bind_param(g, bind, "lip/lstm/wh", lstm_wh_),
                   bind_param(g, bind, "lip/lstm/b", lstm_b_));
    x = g.elu(x, T(cfg_.elu_alpha));
    record("lstm", x);
    const Tensor<T>& hv = g.value(x);
    x = g.reshape(x, {hv.dim(0), cfg_.lv * cfg_.lstm_units});
    record("flatten", x);
    x = g.dropout(x, cfg_.dropout_rnn, mode, drop_seed());

    x = mlp_.apply(g, x, mode, "lip/mlp", bind);
    x = g.elu(x, T(cfg_.elu_alpha));
    record("mlp", x);
    x = g.dropout(x, cfg_.dropout_rnn, mode, drop_seed());

    x = out_.apply(g, x, mode, "lip/out", bind);
    x = g.sigmoid(x);
    record("output", x);
    return x;
  }

  Tensor<T> forward(const Tensor<T>& slices) {
    Graph<T> g;
    return g.value(forward_node(g, g.constant(slices), Mode::kInfer, 0));
  }

  // One output row [32*La] viewed as a code sequence [La, 32].
  static Tensor<T> codes_from_output(const Tensor<T>& out, std::size_t row, std::size_t la) {
    const std::size_t width = out.dim(1);
    Tensor<T> codes({la, width / la});
    std::copy_n(out.data() + row * width, width, codes.data());
    return codes;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Conv& c : conv_) {
      n += c.k.numel() + c.b.numel() + c.gamma.numel() + c.beta.numel();
    }
    n += lstm_wx_.numel() + lstm_wh_.numel() + lstm_b_.numel();
    n += mlp_.trainable_count() + out_.trainable_count();
    return n;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint c;
    for (std::size_t i = 0; i < conv_.size(); ++i) {
      const std::string name = "lip/conv" + std::to_string(i);
      detail::store(c, name + "/k", conv_[i].k);
      detail::store(c, name + "/b", conv_[i].b);
      detail::store(c, name + "/gamma", conv_[i].gamma);
      detail::store(c, name + "/beta", conv_[i].beta);
      detail::store(c, name + "/bn_mean", conv_[i].bn.mean);
      detail::store(c, name + "/bn_var", conv_[i].bn.var);
    }
    detail::store(c, "lip/lstm/wx", lstm_wx_);
    detail::store(c, "lip/lstm/wh", lstm_wh_);
    detail::store(c, "lip/lstm/b", lstm_b_);
    mlp_.save(c, "lip/mlp");
    out_.save(c, "lip/out");
    return c;
  }

  void from_checkpoint(const Checkpoint& c) {
    for (std::size_t i = 0; i < conv_.size(); ++i) {
      const std::string name = "lip/conv" + std::to_string(i);
      detail::fetch(c, name + "/k", conv_[i].k);
      detail::fetch(c, name + "/b", conv_[i].b);
      detail::fetch(c, name + "/gamma", conv_[i].gamma);
      detail::fetch(c, name + "/beta", conv_[i].beta);
      detail::fetch(c, name + "/bn_mean", conv_[i].bn.mean);
      detail::fetch(c, name + "/bn_var", conv_[i].bn.var);
    }
    detail::fetch(c, "lip/lstm/wx", lstm_wx_);
    detail::fetch(c, "lip/lstm/wh", lstm_wh_);
    detail::fetch(c, "lip/lstm/b", lstm_b_);
    mlp_.load(c, "lip/mlp");
    out_.load(c, "lip/out");
  }

  void save(const std::filesystem::path& path) const {
    save_checkpoint(path, to_checkpoint());
    std::ofstream os(path.string() + ".json");
    os << cfg_.to_json().dump(2) << "\n";
    if (!os) throw std::runtime_error("cannot write sidecar for " + path.string());
  }

  static LipReader load(const std::filesystem::path& path) {
    std::ifstream is(path.string() + ".json");
    if (!is) throw std::runtime_error("missing sidecar " + path.string() + ".json");
    nlohmann::json j;
    is >> j;
    LipReader m = build(NetConfig::from_json(j), 0);
    m.from_checkpoint(load_checkpoint(path));
    return m;
  }

 private:
  struct Conv {
    Tensor<T> k, b, gamma, beta;
    BnStats<T> bn;
  };

  NetConfig cfg_;
  std::vector<Conv> conv_;
  Tensor<T> lstm_wx_, lstm_wh_, lstm_b_;
  DenseBn<T> mlp_, out_;
};

}  // namespace liplab
