#pragma once

// Randomized gradient checks shared by the unit and acceptance suites. Each
// returns the worst relative error between the hand-written backward pass and
// central finite differences over every input and parameter of one random
// instance.

#include <random>
#include <vector>

#include "ipascribe/ctc.hpp"
#include "ipascribe/layers.hpp"
#include "ipascribe/model.hpp"
#include "oracles/finite_diff.hpp"

namespace gradcheck {

using ipascribe::Mode;
using ipascribe::Shape;
using T64 = ipascribe::Tensor<double>;

inline T64 random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T64 t(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Compares analytic gradient `analytic` of f against finite differences taken
/// by perturbing `values` in place.
inline double compare(std::vector<double>& values, const std::vector<double>& analytic,
                      const std::function<double()>& f) {
  return oracle::max_relative_error(analytic, oracle::numeric_gradient(values, f));
}

inline double conv1d(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  const std::size_t B = dim(rng), T = dim(rng) + 2, Cin = dim(rng), Cout = dim(rng);
  const std::size_t K = std::uniform_int_distribution<int>(0, 1)(rng) ? 3 : 1;
  T64 x = random_tensor(rng, {B, T, Cin}), w = random_tensor(rng, {K, Cin, Cout}), b = random_tensor(rng, {Cout});
  const T64 r = random_tensor(rng, {B, T, Cout});
  auto loss = [&] { return dot(ipascribe::conv1d_forward(x, w, b).data, r.data); };
  T64 dx = ipascribe::conv1d_backward(x, w, b, r);
  double worst = compare(x.data, dx.data, loss);
  worst = std::max(worst, compare(w.data, w.grad, loss));
  return std::max(worst, compare(b.data, b.grad, loss));
}

inline double relu(std::mt19937_64& rng) {
  T64 x = random_tensor(rng, {2, 5, 3});
  for (auto& v : x.data)
    if (std::abs(v) < 1e-3) v = 0.5;  // keep probes away from the kink
  const T64 r = random_tensor(rng, x.shape);
  auto loss = [&] { return dot(ipascribe::relu_forward(x).data, r.data); };
  T64 dx = ipascribe::relu_backward(x, r);
  return compare(x.data, dx.data, loss);
}

inline double batchnorm(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(2, 4);
  const std::size_t B = dim(rng), T = dim(rng), C = dim(rng);
  T64 x = random_tensor(rng, {B, T, C}, -2.0, 2.0);
  T64 gamma = random_tensor(rng, {C}, 0.5, 1.5), beta = random_tensor(rng, {C});
  T64 rm({C}, 0.0), rv({C}, 1.0);
  const T64 r = random_tensor(rng, x.shape);
  auto loss = [&] { return dot(ipascribe::batchnorm_forward(x, gamma, beta, rm, rv, Mode::Train).data, r.data); };
  ipascribe::BatchNormCache<double> cache;
  ipascribe::batchnorm_forward(x, gamma, beta, rm, rv, Mode::Train, &cache);
  T64 dx = ipascribe::batchnorm_backward(cache, gamma, beta, r);
  double worst = compare(x.data, dx.data, loss);
  worst = std::max(worst, compare(gamma.data, gamma.grad, loss));
  return std::max(worst, compare(beta.data, beta.grad, loss));
}

inline double lstm(std::mt19937_64& rng, bool reverse, std::size_t T = 5, std::size_t H = 4) {
  std::uniform_int_distribution<std::size_t> dim(1, 3);
  const std::size_t B = dim(rng), In = dim(rng);
  T64 x = random_tensor(rng, {B, T, In});
  T64 w_ih = random_tensor(rng, {In, 4 * H}, -0.6, 0.6), w_hh = random_tensor(rng, {H, 4 * H}, -0.6, 0.6);
  T64 bias = random_tensor(rng, {4 * H}, -0.5, 0.5);
  const T64 r = random_tensor(rng, {B, T, H});
  auto loss = [&] { return dot(ipascribe::lstm_forward(x, w_ih, w_hh, bias, reverse).data, r.data); };
  ipascribe::LstmCache<double> cache;
  ipascribe::lstm_forward(x, w_ih, w_hh, bias, reverse, &cache);
  T64 dx = ipascribe::lstm_backward(cache, w_ih, w_hh, bias, r);
  double worst = compare(x.data, dx.data, loss);
  worst = std::max(worst, compare(w_ih.data, w_ih.grad, loss));
  worst = std::max(worst, compare(w_hh.data, w_hh.grad, loss));
  return std::max(worst, compare(bias.data, bias.grad, loss));
}

inline double linear(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  const std::size_t B = dim(rng), T = dim(rng), In = dim(rng), Out = dim(rng);
  T64 x = random_tensor(rng, {B, T, In}), w = random_tensor(rng, {In, Out}), b = random_tensor(rng, {Out});
  const T64 r = random_tensor(rng, {B, T, Out});
  auto loss = [&] { return dot(ipascribe::linear_forward(x, w, b).data, r.data); };
  T64 dx = ipascribe::linear_backward(x, w, b, r);
  double worst = compare(x.data, dx.data, loss);
  worst = std::max(worst, compare(w.data, w.grad, loss));
  return std::max(worst, compare(b.data, b.grad, loss));
}

/// CTC gradient with respect to the (unconstrained) log-probability inputs.
inline double ctc(std::mt19937_64& rng) {
  const std::size_t C = 5, blank = 4;
  const std::size_t T = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
  std::vector<std::size_t> labels;
  do {
    labels.resize(std::uniform_int_distribution<std::size_t>(1, 3)(rng));
    for (auto& l : labels) l = std::uniform_int_distribution<std::size_t>(0, C - 2)(rng);
  } while (ipascribe::ctc_min_frames(labels) > T);
  T64 logp = ipascribe::log_softmax(random_tensor(rng, {T, C}, -2.0, 2.0));
  auto loss = [&] { return ipascribe::ctc_loss(logp, std::span<const std::size_t>(labels), blank).loss; };
  auto res = ipascribe::ctc_loss(logp, std::span<const std::size_t>(labels), blank);
  return compare(logp.data, res.grad, loss);
}

inline ipascribe::ModelConfig tiny_model_config() {
  ipascribe::ModelConfig cfg;
  cfg.mfcc_coefficients = 40;
  cfg.conv_units = 8;
  cfg.lstm_units = 8;
  cfg.lstm_dropout = 0.0;
  return cfg;
}

/// Full CTC(model(x)) on a 6-frame, 2-label problem with reduced widths,
/// checked against every model parameter and the input.
inline double model(std::mt19937_64& rng, double dropout = 0.0) {
  auto cfg = tiny_model_config();
  cfg.lstm_dropout = dropout;
  ipascribe::Model<double> net(cfg);
  net.init(rng());
  for (auto& e : net.params().entries())  // break the identity init of batch norm
    if (e.name.ends_with(".bn.gamma") || e.name.ends_with(".bn.beta"))
      for (auto& v : e.value.data) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  const std::size_t B = 2, T = 6;
  T64 x = random_tensor(rng, {B, T, cfg.mfcc_coefficients});
  std::vector<ipascribe::PhonemeSeq> targets;
  for (std::size_t b = 0; b < B; ++b) {
    ipascribe::PhonemeSeq t;
    std::uniform_int_distribution<int> id(0, 36);
    t.emplace_back(static_cast<std::uint8_t>(id(rng)));
    t.emplace_back(static_cast<std::uint8_t>(id(rng)));
    targets.push_back(t);
  }
  const std::uint64_t seed = rng();
  // Redraw inputs until no relu pre-activation sits within probing distance
  // of the kink, so the finite differences stay on one linear piece.
  for (bool near_kink = true; near_kink;) {
    ipascribe::ForwardTrace<double> probe;
    net.forward(x, Mode::Train, seed, 3, &probe);
    near_kink = false;
    for (const auto& st : probe.convs)
      for (double v : st.conv_out.data) near_kink = near_kink || std::abs(v) < 1e-3;
    if (near_kink) x = random_tensor(rng, x.shape);
  }
  auto loss = [&] {
    return ipascribe::ctc_batch_loss(net.forward(x, Mode::Train, seed, 3), targets).loss;
  };
  net.params().zero_grad();
  ipascribe::ForwardTrace<double> trace;
  auto logits = net.forward(x, Mode::Train, seed, 3, &trace);
  auto bl = ipascribe::ctc_batch_loss(logits, targets);
  T64 dx = net.backward(trace, bl.dlogits);
  double worst = compare(x.data, dx.data, loss);
  for (auto& e : net.params().entries()) {
    if (!e.trainable) continue;
    const std::vector<double> analytic = e.value.grad;
    worst = std::max(worst, compare(e.value.data, analytic, loss));
  }
  return worst;
}

}  // namespace gradcheck
