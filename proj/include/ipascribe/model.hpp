#pragma once

// The acoustic model: Conv1d blocks, bidirectional LSTM blocks and a per-frame
// linear projection onto the 38 CTC classes.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ipascribe/ctc.hpp"
#include "ipascribe/layers.hpp"
#include "ipascribe/rng.hpp"
#include "ipascribe/tensor.hpp"

namespace ipascribe {

enum class Activation : std::uint8_t { None, Relu };

struct ModelConfig {
  std::size_t mfcc_coefficients = 40;
  std::size_t conv_layers = 2;
  std::size_t conv_units = 128;
  std::size_t conv_kernel = 3;
  Activation conv_activation = Activation::Relu;
  bool conv_batchnorm = true;
  std::size_t lstm_layers = 2;
  std::size_t lstm_units = 512;
  double lstm_dropout = 0.5;
  bool lstm_bidirectional = true;
  bool lstm_batchnorm = true;
  std::size_t output_classes = kOutputClasses;

  void validate() const {
    if (mfcc_coefficients == 0 || output_classes < 2) throw ConfigError("model widths must be positive");
    if (conv_layers > 0 && (conv_units == 0 || conv_kernel == 0)) throw ConfigError("conv units/kernel must be positive");
    if (conv_kernel % 2 == 0) throw ConfigError("conv kernel must be odd");
    if (lstm_layers > 0 && lstm_units == 0) throw ConfigError("lstm units must be positive");
    if (!(lstm_dropout >= 0.0 && lstm_dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  }

  std::size_t lstm_output_width() const { return lstm_units * (lstm_bidirectional ? 2 : 1); }

  bool operator==(const ModelConfig&) const = default;
};

NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::None, "none"}, {Activation::Relu, "relu"}})

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"mfcc_coefficients", c.mfcc_coefficients}, {"conv_layers", c.conv_layers},
                     {"conv_units", c.conv_units},               {"conv_kernel", c.conv_kernel},
                     {"conv_activation", c.conv_activation},     {"conv_batchnorm", c.conv_batchnorm},
                     {"lstm_layers", c.lstm_layers},             {"lstm_units", c.lstm_units},
                     {"lstm_dropout", c.lstm_dropout},           {"lstm_bidirectional", c.lstm_bidirectional},
                     {"lstm_batchnorm", c.lstm_batchnorm},       {"output_classes", c.output_classes},
                     {"blank_id", c.output_classes - 1}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.mfcc_coefficients = j.value("mfcc_coefficients", d.mfcc_coefficients);
  c.conv_layers = j.value("conv_layers", d.conv_layers);
  c.conv_units = j.value("conv_units", d.conv_units);
  c.conv_kernel = j.value("conv_kernel", d.conv_kernel);
  c.conv_activation = j.value("conv_activation", d.conv_activation);
  c.conv_batchnorm = j.value("conv_batchnorm", d.conv_batchnorm);
  c.lstm_layers = j.value("lstm_layers", d.lstm_layers);
  c.lstm_units = j.value("lstm_units", d.lstm_units);
  c.lstm_dropout = j.value("lstm_dropout", d.lstm_dropout);
  c.lstm_bidirectional = j.value("lstm_bidirectional", d.lstm_bidirectional);
  c.lstm_batchnorm = j.value("lstm_batchnorm", d.lstm_batchnorm);
  c.output_classes = j.value("output_classes", d.output_classes);
}

/// Name, shape and role of one model tensor.
struct ParamSpec {
  std::string name;
  Shape shape;
  bool trainable = true;  // running statistics are not
};

/// Every tensor of the model in canonical order.
inline std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  auto add_bn = [&](const std::string& prefix, std::size_t c) {
    out.push_back({prefix + ".bn.gamma", {c}, true});
    out.push_back({prefix + ".bn.beta", {c}, true});
    out.push_back({prefix + ".bn.running_mean", {c}, false});
    out.push_back({prefix + ".bn.running_var", {c}, false});
  };
  std::size_t width = cfg.mfcc_coefficients;
  for (std::size_t i = 0; i < cfg.conv_layers; ++i) {
    const std::string p = "conv" + std::to_string(i);
    out.push_back({p + ".weight", {cfg.conv_kernel, width, cfg.conv_units}, true});
    out.push_back({p + ".bias", {cfg.conv_units}, true});
    width = cfg.conv_units;
    if (cfg.conv_batchnorm) add_bn(p, width);
  }
  const std::size_t H = cfg.lstm_units;
  for (std::size_t i = 0; i < cfg.lstm_layers; ++i) {
    const std::string p = "lstm" + std::to_string(i);
    for (const char* dir : {"fwd", "bwd"}) {
      if (std::string(dir) == "bwd" && !cfg.lstm_bidirectional) break;
      out.push_back({p + "." + dir + ".w_ih", {width, 4 * H}, true});
      out.push_back({p + "." + dir + ".w_hh", {H, 4 * H}, true});
      out.push_back({p + "." + dir + ".bias", {4 * H}, true});
    }
    width = cfg.lstm_output_width();
    if (cfg.lstm_batchnorm) add_bn(p, width);
  }
  out.push_back({"output.weight", {width, cfg.output_classes}, true});
  out.push_back({"output.bias", {cfg.output_classes}, true});
  return out;
}

/// Trainable element count (running statistics excluded).
inline std::size_t count_params(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : param_specs(cfg))
    if (s.trainable) n += shape_size(s.shape);
  return n;
}

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> value;
  bool trainable = true;
};

/// Parameters in canonical order with name lookup.
template <typename S>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(const std::vector<ParamSpec>& specs) {
    for (const auto& s : specs) entries_.push_back({s.name, Tensor<S>(s.shape), s.trainable});
  }

  Tensor<S>& operator[](const std::string& name) { return find(name).value; }
  const Tensor<S>& operator[](const std::string& name) const { return find(name).value; }

  NamedParam<S>& find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return e;
    throw ShapeMismatch("no parameter named " + name);
  }
  const NamedParam<S>& find(const std::string& name) const {
    return const_cast<ParamStore*>(this)->find(name);
  }

  std::vector<NamedParam<S>>& entries() { return entries_; }
  const std::vector<NamedParam<S>>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.trainable) {
        e.value.ensure_grad();
        e.value.zero_grad();
      }
  }

  bool operator==(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != o.entries_[i].name || entries_[i].value.shape != o.entries_[i].value.shape ||
          entries_[i].value.data != o.entries_[i].value.data)
        return false;
    return true;
  }

 private:
  std::vector<NamedParam<S>> entries_;
};

/// Activations kept by a forward pass for the matching backward pass.
template <typename S>
struct ForwardTrace {
  struct ConvStage {
    Tensor<S> input;
    Tensor<S> conv_out;
    Tensor<S> act_out;
    BatchNormCache<S> bn;
  };
  struct LstmStage {
    Tensor<S> input;
    LstmCache<S> fwd, bwd;
    BatchNormCache<S> bn;
    std::vector<S> dropout_mask;
  };
  std::vector<ConvStage> convs;
  std::vector<LstmStage> lstms;
  Tensor<S> head_input;
};

template <typename S>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(cfg), params_(param_specs(cfg)) {
    cfg_.validate();
    for (auto& e : params_.entries())
      if (e.name.ends_with("running_var") || e.name.ends_with("bn.gamma"))
        std::fill(e.value.data.begin(), e.value.data.end(), S(1));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  /// Uniform(-k, k) with k = 1/sqrt(fan_in). Conv fan-in is Cin*K, linear
  /// fan-in is the input width, LSTM uses the hidden size. LSTM biases start
  /// at zero except the forget gate at +1. Batch norm starts at identity.
  void init(std::uint64_t seed) {
    for (auto& e : params_.entries()) {
      auto& t = e.value;
      CounterRng rng(seed, CounterRng::stream_id("init:" + e.name));
      double fan_in = 0.0;
      if (e.name.starts_with("conv") && (e.name.ends_with(".weight") || e.name.ends_with(".bias"))) {
        fan_in = static_cast<double>(cfg_.conv_kernel * params_[e.name.substr(0, e.name.find('.')) + ".weight"].dim(1));
      } else if (e.name.starts_with("output.")) {
        fan_in = static_cast<double>(params_["output.weight"].dim(0));
      } else if (e.name.ends_with(".w_ih") || e.name.ends_with(".w_hh")) {
        fan_in = static_cast<double>(cfg_.lstm_units);
      }
      if (e.name.starts_with("lstm") && e.name.ends_with(".bias") && !e.name.ends_with("bn.bias")) {
        const std::size_t H = cfg_.lstm_units;
        std::fill(t.data.begin(), t.data.end(), S(0));
        std::fill(t.data.begin() + static_cast<std::ptrdiff_t>(H), t.data.begin() + static_cast<std::ptrdiff_t>(2 * H), S(1));
      } else if (fan_in > 0.0) {
        const double k = 1.0 / std::sqrt(fan_in);
        for (auto& v : t.data) v = static_cast<S>(rng.uniform(-k, k));
      } else if (e.name.ends_with("gamma") || e.name.ends_with("running_var")) {
        std::fill(t.data.begin(), t.data.end(), S(1));
      } else {
        std::fill(t.data.begin(), t.data.end(), S(0));
      }
    }
  }

  /// Logits [B, T, classes] for input features [B, T, mfcc_coefficients].
  /// Train mode updates batch-norm running statistics and draws dropout masks
  /// keyed on (seed, layer, step); eval mode leaves the model untouched.
  Tensor<S> forward(const Tensor<S>& x, Mode mode, std::uint64_t seed = 0, std::uint64_t step = 0,
                    ForwardTrace<S>* trace = nullptr) {
    require_rank(x, 3, "model input");
    if (x.dim(2) != cfg_.mfcc_coefficients) throw ShapeMismatch("model input width != mfcc_coefficients");
    if (trace) {
      trace->convs.assign(cfg_.conv_layers, {});
      trace->lstms.assign(cfg_.lstm_layers, {});
    }
    Tensor<S> h = x;
    for (std::size_t i = 0; i < cfg_.conv_layers; ++i) {
      const std::string p = "conv" + std::to_string(i);
      Tensor<S> c = conv1d_forward(h, params_[p + ".weight"], params_[p + ".bias"]);
      Tensor<S> a = cfg_.conv_activation == Activation::Relu ? relu_forward(c) : c;
      Tensor<S> out = cfg_.conv_batchnorm ? batchnorm_forward(a, params_[p + ".bn.gamma"], params_[p + ".bn.beta"],
                                                              params_[p + ".bn.running_mean"],
                                                              params_[p + ".bn.running_var"], mode,
                                                              trace ? &trace->convs[i].bn : nullptr)
                                          : a;
      if (trace) {
        auto& st = trace->convs[i];
        st.input = std::move(h);
        st.conv_out = std::move(c);
        st.act_out = std::move(a);
      }
      h = std::move(out);
    }
    for (std::size_t i = 0; i < cfg_.lstm_layers; ++i) {
      const std::string p = "lstm" + std::to_string(i);
      auto* st = trace ? &trace->lstms[i] : nullptr;
      Tensor<S> y = lstm_forward(h, params_[p + ".fwd.w_ih"], params_[p + ".fwd.w_hh"], params_[p + ".fwd.bias"],
                                 false, st ? &st->fwd : nullptr);
      if (cfg_.lstm_bidirectional) {
        Tensor<S> yb = lstm_forward(h, params_[p + ".bwd.w_ih"], params_[p + ".bwd.w_hh"], params_[p + ".bwd.bias"],
                                    true, st ? &st->bwd : nullptr);
        y = concat_channels(y, yb);
      }
      if (cfg_.lstm_batchnorm)
        y = batchnorm_forward(y, params_[p + ".bn.gamma"], params_[p + ".bn.beta"], params_[p + ".bn.running_mean"],
                              params_[p + ".bn.running_var"], mode, st ? &st->bn : nullptr);
      y = dropout_forward(y, cfg_.lstm_dropout, mode, seed, i, step, st ? &st->dropout_mask : nullptr);
      if (st) st->input = std::move(h);
      h = std::move(y);
    }
    Tensor<S> logits = linear_forward(h, params_["output.weight"], params_["output.bias"]);
    if (trace) trace->head_input = std::move(h);
    return logits;
  }

  /// Accumulates parameter gradients for d(loss)/d(logits); returns the
  /// gradient with respect to the model input.
  Tensor<S> backward(const ForwardTrace<S>& trace, const Tensor<S>& dlogits) {
    Tensor<S> g = linear_backward(trace.head_input, params_["output.weight"], params_["output.bias"], dlogits);
    for (std::size_t i = cfg_.lstm_layers; i-- > 0;) {
      const std::string p = "lstm" + std::to_string(i);
      const auto& st = trace.lstms[i];
      g = dropout_backward(st.dropout_mask, g);
      if (cfg_.lstm_batchnorm) g = batchnorm_backward(st.bn, params_[p + ".bn.gamma"], params_[p + ".bn.beta"], g);
      if (cfg_.lstm_bidirectional) {
        auto [gf, gb] = split_channels(g, cfg_.lstm_units);
        Tensor<S> dx = lstm_backward(st.fwd, params_[p + ".fwd.w_ih"], params_[p + ".fwd.w_hh"],
                                     params_[p + ".fwd.bias"], gf);
        Tensor<S> dxb = lstm_backward(st.bwd, params_[p + ".bwd.w_ih"], params_[p + ".bwd.w_hh"],
                                      params_[p + ".bwd.bias"], gb);
        for (std::size_t k = 0; k < dx.size(); ++k) dx.data[k] += dxb.data[k];
        g = std::move(dx);
      } else {
        g = lstm_backward(st.fwd, params_[p + ".fwd.w_ih"], params_[p + ".fwd.w_hh"], params_[p + ".fwd.bias"], g);
      }
    }
    for (std::size_t i = cfg_.conv_layers; i-- > 0;) {
      const std::string p = "conv" + std::to_string(i);
      const auto& st = trace.convs[i];
      if (cfg_.conv_batchnorm) g = batchnorm_backward(st.bn, params_[p + ".bn.gamma"], params_[p + ".bn.beta"], g);
      if (cfg_.conv_activation == Activation::Relu) g = relu_backward(st.conv_out, g);
      g = conv1d_backward(st.input, params_[p + ".weight"], params_[p + ".bias"], g);
    }
    return g;
  }

 private:
  ModelConfig cfg_;
  ParamStore<S> params_;
};

/// Mean CTC loss over a batch of logits [B, T, C] and its gradient with
/// respect to the logits (log-softmax included).
template <typename S>
struct BatchLoss {
  double loss = 0.0;
  Tensor<S> dlogits;
  std::vector<double> per_sample;
};

template <typename S>
BatchLoss<S> ctc_batch_loss(const Tensor<S>& logits, const std::vector<PhonemeSeq>& targets) {
  require_rank(logits, 3, "batch logits");
  const std::size_t B = logits.dim(0), T = logits.dim(1), C = logits.dim(2);
  if (targets.size() != B) throw ShapeMismatch("one target per batch element required");
  BatchLoss<S> out;
  out.dlogits = Tensor<S>(logits.shape);
  const std::size_t blank = C - 1;
  for (std::size_t b = 0; b < B; ++b) {
    Tensor<S> row({T, C}, std::vector<S>(logits.data.begin() + static_cast<std::ptrdiff_t>(b * T * C),
                                         logits.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * T * C)));
    Tensor<S> logp = log_softmax(row);
    std::vector<std::size_t> ids;
    for (Phoneme p : targets[b]) ids.push_back(p.id());
    auto res = ctc_loss(logp, std::span<const std::size_t>(ids), blank);
    out.per_sample.push_back(res.loss);
    out.loss += res.loss / static_cast<double>(B);
    Tensor<S> dlogp({T, C}, std::move(res.grad));
    for (auto& v : dlogp.data) v /= static_cast<S>(B);
    Tensor<S> dx = log_softmax_backward(logp, dlogp);
    std::copy(dx.data.begin(), dx.data.end(), out.dlogits.data.begin() + static_cast<std::ptrdiff_t>(b * T * C));
  }
  return out;
}

}  // namespace ipascribe
