#pragma once

// Layer kernels with hand-derived backward passes. Activations are
// [batch, time, channels] row-major tensors; parameters carry their own
// gradient buffers, which backward passes accumulate into.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ipascribe/rng.hpp"
#include "ipascribe/tensor.hpp"

namespace ipascribe {

enum class Mode : std::uint8_t { Train, Eval };

namespace detail {

template <typename S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
std::size_t channels_of(const Tensor<S>& x) {
  if (x.rank() == 0) throw ShapeMismatch("scalar where a channel axis was expected");
  return x.shape.back();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Conv1d, same padding, stride 1. w is [K, Cin, Cout]:
//   y[b,t,o] = bias[o] + sum_{k,i} w[k,i,o] * x[b, t + k - K/2, i]

template <typename S>
Tensor<S> conv1d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
  require_rank(x, 3, "conv1d input");
  require_rank(w, 3, "conv1d weight");
  const std::size_t B = x.dim(0), T = x.dim(1), Cin = x.dim(2);
  const std::size_t K = w.dim(0), Cout = w.dim(2);
  if (K % 2 == 0) throw ShapeMismatch("conv1d kernel size must be odd");
  if (w.dim(1) != Cin) throw ShapeMismatch("conv1d weight input channels != input channels");
  require_shape(bias, {Cout}, "conv1d bias");

  Tensor<S> y({B, T, Cout});
  auto Y = as_matrix(y.data, B * T, Cout);
  Y.rowwise() = ConstVecMap<S>(bias.data.data(), static_cast<Eigen::Index>(Cout));
  const auto X = as_matrix(x.data, B * T, Cin);
  const auto half = static_cast<std::ptrdiff_t>(K / 2);
  for (std::size_t k = 0; k < K; ++k) {
    const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(k) - half;
    const std::size_t t0 = d < 0 ? static_cast<std::size_t>(-d) : 0;
    const std::size_t t1 = d > 0 ? T - std::min(T, static_cast<std::size_t>(d)) : T;
    if (t1 <= t0) continue;
    const auto n = static_cast<Eigen::Index>(t1 - t0);
    ConstMatMap<S> Wk(w.data.data() + k * Cin * Cout, static_cast<Eigen::Index>(Cin), static_cast<Eigen::Index>(Cout));
    for (std::size_t b = 0; b < B; ++b) {
      const auto out_row = static_cast<Eigen::Index>(b * T + t0);
      const auto in_row = static_cast<Eigen::Index>(static_cast<std::ptrdiff_t>(b * T + t0) + d);
      Y.middleRows(out_row, n).noalias() += X.middleRows(in_row, n) * Wk;
    }
  }
  return y;
}

/// Accumulates into w.grad and bias.grad; returns the input gradient.
template <typename S>
Tensor<S> conv1d_backward(const Tensor<S>& x, Tensor<S>& w, Tensor<S>& bias, const Tensor<S>& dy) {
  const std::size_t B = x.dim(0), T = x.dim(1), Cin = x.dim(2);
  const std::size_t K = w.dim(0), Cout = w.dim(2);
  require_shape(dy, {B, T, Cout}, "conv1d output gradient");
  w.ensure_grad();
  bias.ensure_grad();

  Tensor<S> dx({B, T, Cin});
  auto dX = as_matrix(dx.data, B * T, Cin);
  const auto X = as_matrix(x.data, B * T, Cin);
  const auto dY = as_matrix(dy.data, B * T, Cout);
  VecMap<S>(bias.grad.data(), static_cast<Eigen::Index>(Cout)) += dY.colwise().sum();

  const auto half = static_cast<std::ptrdiff_t>(K / 2);
  for (std::size_t k = 0; k < K; ++k) {
    const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(k) - half;
    const std::size_t t0 = d < 0 ? static_cast<std::size_t>(-d) : 0;
    const std::size_t t1 = d > 0 ? T - std::min(T, static_cast<std::size_t>(d)) : T;
    if (t1 <= t0) continue;
    const auto n = static_cast<Eigen::Index>(t1 - t0);
    ConstMatMap<S> Wk(w.data.data() + k * Cin * Cout, static_cast<Eigen::Index>(Cin), static_cast<Eigen::Index>(Cout));
    MatMap<S> dWk(w.grad.data() + k * Cin * Cout, static_cast<Eigen::Index>(Cin), static_cast<Eigen::Index>(Cout));
    for (std::size_t b = 0; b < B; ++b) {
      const auto out_row = static_cast<Eigen::Index>(b * T + t0);
      const auto in_row = static_cast<Eigen::Index>(static_cast<std::ptrdiff_t>(b * T + t0) + d);
      dX.middleRows(in_row, n).noalias() += dY.middleRows(out_row, n) * Wk.transpose();
      dWk.noalias() += X.middleRows(in_row, n).transpose() * dY.middleRows(out_row, n);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename S>
Tensor<S> relu_forward(const Tensor<S>& x) {
  Tensor<S> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > S(0) ? x.data[i] : S(0);
  return y;
}

/// Gradient passes only where the input was strictly positive.
template <typename S>
Tensor<S> relu_backward(const Tensor<S>& x, const Tensor<S>& dy) {
  Tensor<S> dx(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] = x.data[i] > S(0) ? dy.data[i] : S(0);
  return dx;
}

// ---------------------------------------------------------------------------
// Batch norm over every axis but the last (batch x time per channel).

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

template <typename S>
struct BatchNormCache {
  Mode mode = Mode::Eval;
  std::size_t rows = 0;
  std::size_t channels = 0;
  std::vector<S> xhat;
  std::vector<S> inv_std;
};

/// Train mode normalizes with the (biased) batch statistics and moves the
/// running statistics toward them by `momentum`; eval mode uses the running
/// statistics and mutates nothing.
template <typename S>
Tensor<S> batchnorm_forward(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                            Tensor<S>& running_mean, Tensor<S>& running_var, Mode mode,
                            BatchNormCache<S>* cache = nullptr, BatchNormOptions opt = {}) {
  const std::size_t C = detail::channels_of(x);
  const std::size_t N = x.size() / C;
  require_shape(gamma, {C}, "batchnorm gamma");
  require_shape(beta, {C}, "batchnorm beta");
  require_shape(running_mean, {C}, "batchnorm running mean");
  require_shape(running_var, {C}, "batchnorm running var");

  std::vector<S> mean(C), inv_std(C);
  if (mode == Mode::Train) {
    if (N <= 1) throw DegenerateBatch("batch norm needs more than one value per channel in train mode");
    std::vector<double> sum(C, 0.0), sq(C, 0.0);
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t c = 0; c < C; ++c) sum[c] += static_cast<double>(x.data[r * C + c]);
    for (std::size_t c = 0; c < C; ++c) sum[c] /= static_cast<double>(N);
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double dlt = static_cast<double>(x.data[r * C + c]) - sum[c];
        sq[c] += dlt * dlt;
      }
    for (std::size_t c = 0; c < C; ++c) {
      const double var = sq[c] / static_cast<double>(N);
      mean[c] = static_cast<S>(sum[c]);
      inv_std[c] = static_cast<S>(1.0 / std::sqrt(var + opt.eps));
      running_mean.data[c] = static_cast<S>((1.0 - opt.momentum) * running_mean.data[c] + opt.momentum * sum[c]);
      running_var.data[c] = static_cast<S>((1.0 - opt.momentum) * running_var.data[c] + opt.momentum * var);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean.data[c];
      inv_std[c] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(running_var.data[c]) + opt.eps));
    }
  }

  Tensor<S> y(x.shape);
  std::vector<S> xhat(cache ? x.size() : 0);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const S xh = (x.data[r * C + c] - mean[c]) * inv_std[c];
      if (cache) xhat[r * C + c] = xh;
      y.data[r * C + c] = gamma.data[c] * xh + beta.data[c];
    }
  if (cache) {
    cache->mode = mode;
    cache->rows = N;
    cache->channels = C;
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename S>
Tensor<S> batchnorm_backward(const BatchNormCache<S>& cache, Tensor<S>& gamma, Tensor<S>& beta,
                             const Tensor<S>& dy) {
  const std::size_t N = cache.rows, C = cache.channels;
  if (dy.size() != N * C) throw ShapeMismatch("batchnorm output gradient size");
  gamma.ensure_grad();
  beta.ensure_grad();
  std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      sum_dy[c] += static_cast<double>(dy.data[r * C + c]);
      sum_dy_xhat[c] += static_cast<double>(dy.data[r * C + c]) * static_cast<double>(cache.xhat[r * C + c]);
    }
  for (std::size_t c = 0; c < C; ++c) {
    gamma.grad[c] += static_cast<S>(sum_dy_xhat[c]);
    beta.grad[c] += static_cast<S>(sum_dy[c]);
  }

  Tensor<S> dx(dy.shape);
  if (cache.mode == Mode::Eval) {
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t c = 0; c < C; ++c)
        dx.data[r * C + c] = dy.data[r * C + c] * gamma.data[c] * cache.inv_std[c];
    return dx;
  }
  // dx = gamma * inv_std / N * (N * dy - sum(dy) - xhat * sum(dy * xhat))
  const S n = static_cast<S>(N);
  for (std::size_t r = 0; r < N; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      dx.data[i] = gamma.data[c] * cache.inv_std[c] / n *
                   (n * dy.data[i] - static_cast<S>(sum_dy[c]) - cache.xhat[i] * static_cast<S>(sum_dy_xhat[c]));
    }
  return dx;
}

// ---------------------------------------------------------------------------
// LSTM. Gates are packed [i | f | g | o] along the 4H axis:
//   a = x W_ih + h_prev W_hh + bias
//   i, f, o = sigmoid(.), g = tanh(.)
//   c = f * c_prev + i * g,  h = o * tanh(c),  h_0 = c_0 = 0

template <typename S>
struct LstmCache {
  std::size_t batch = 0, steps = 0, inputs = 0, hidden = 0;
  bool reverse = false;
  std::vector<S> x;      // time-major [T*B, In], in processing order
  std::vector<S> gates;  // activated gates [T*B, 4H]
  std::vector<S> c;      // [T*B, H]
  std::vector<S> tanh_c; // [T*B, H]
  std::vector<S> h;      // [T*B, H]
};

template <typename S>
Tensor<S> lstm_forward(const Tensor<S>& x, const Tensor<S>& w_ih, const Tensor<S>& w_hh, const Tensor<S>& bias,
                       bool reverse, LstmCache<S>* cache = nullptr) {
  require_rank(x, 3, "lstm input");
  const std::size_t B = x.dim(0), T = x.dim(1), In = x.dim(2);
  require_rank(w_hh, 2, "lstm w_hh");
  const std::size_t H = w_hh.dim(0);
  require_shape(w_ih, {In, 4 * H}, "lstm w_ih");
  require_shape(w_hh, {H, 4 * H}, "lstm w_hh");
  require_shape(bias, {4 * H}, "lstm bias");

  LstmCache<S> local;
  LstmCache<S>& st = cache ? *cache : local;
  st.batch = B, st.steps = T, st.inputs = In, st.hidden = H, st.reverse = reverse;
  st.x.assign(T * B * In, S(0));
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t src_t = reverse ? T - 1 - t : t;
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>((b * T + src_t) * In), In,
                  st.x.begin() + static_cast<std::ptrdiff_t>((t * B + b) * In));
  }
  st.gates.assign(T * B * 4 * H, S(0));
  st.c.assign(T * B * H, S(0));
  st.tanh_c.assign(T * B * H, S(0));
  st.h.assign(T * B * H, S(0));

  auto A = as_matrix(st.gates, T * B, 4 * H);
  A.noalias() = as_matrix(st.x, T * B, In) * as_matrix(w_ih.data, In, 4 * H);
  A.rowwise() += ConstVecMap<S>(bias.data.data(), static_cast<Eigen::Index>(4 * H));
  const auto Whh = as_matrix(w_hh.data, H, 4 * H);
  const auto rows = static_cast<Eigen::Index>(B);

  for (std::size_t t = 0; t < T; ++t) {
    auto At = A.middleRows(static_cast<Eigen::Index>(t * B), rows);
    if (t > 0) At.noalias() += as_matrix(st.h, T * B, H).middleRows(static_cast<Eigen::Index>((t - 1) * B), rows) * Whh;
    for (std::size_t b = 0; b < B; ++b) {
      S* g = st.gates.data() + (t * B + b) * 4 * H;
      const S* c_prev = t > 0 ? st.c.data() + ((t - 1) * B + b) * H : nullptr;
      S* c = st.c.data() + (t * B + b) * H;
      S* tc = st.tanh_c.data() + (t * B + b) * H;
      S* h = st.h.data() + (t * B + b) * H;
      for (std::size_t j = 0; j < H; ++j) {
        const S ig = detail::sigmoid(g[j]);
        const S fg = detail::sigmoid(g[H + j]);
        const S gg = std::tanh(g[2 * H + j]);
        const S og = detail::sigmoid(g[3 * H + j]);
        g[j] = ig, g[H + j] = fg, g[2 * H + j] = gg, g[3 * H + j] = og;
        c[j] = (c_prev ? fg * c_prev[j] : S(0)) + ig * gg;
        tc[j] = std::tanh(c[j]);
        h[j] = og * tc[j];
      }
    }
  }

  Tensor<S> y({B, T, H});
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t dst_t = reverse ? T - 1 - t : t;
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(st.h.begin() + static_cast<std::ptrdiff_t>((t * B + b) * H), H,
                  y.data.begin() + static_cast<std::ptrdiff_t>((b * T + dst_t) * H));
  }
  return y;
}

/// Backpropagation through time. Accumulates parameter gradients; returns the
/// input gradient in [B, T, In] order.
template <typename S>
Tensor<S> lstm_backward(const LstmCache<S>& st, Tensor<S>& w_ih, Tensor<S>& w_hh, Tensor<S>& bias,
                        const Tensor<S>& dy) {
  const std::size_t B = st.batch, T = st.steps, In = st.inputs, H = st.hidden;
  require_shape(dy, {B, T, H}, "lstm output gradient");
  w_ih.ensure_grad();
  w_hh.ensure_grad();
  bias.ensure_grad();

  std::vector<S> dA(T * B * 4 * H, S(0));
  std::vector<S> dh_next(B * H, S(0)), dc_next(B * H, S(0));
  const auto Whh = as_matrix(w_hh.data, H, 4 * H);
  auto dWhh = as_matrix(w_hh.grad, H, 4 * H);
  auto dAm = as_matrix(dA, T * B, 4 * H);
  const auto Hm = as_matrix(st.h, T * B, H);
  const auto rows = static_cast<Eigen::Index>(B);

  for (std::size_t t = T; t-- > 0;) {
    const std::size_t src_t = st.reverse ? T - 1 - t : t;
    for (std::size_t b = 0; b < B; ++b) {
      const S* g = st.gates.data() + (t * B + b) * 4 * H;
      const S* tc = st.tanh_c.data() + (t * B + b) * H;
      const S* c_prev = t > 0 ? st.c.data() + ((t - 1) * B + b) * H : nullptr;
      const S* dy_row = dy.data.data() + (b * T + src_t) * H;
      S* da = dA.data() + (t * B + b) * 4 * H;
      S* dhn = dh_next.data() + b * H;
      S* dcn = dc_next.data() + b * H;
      for (std::size_t j = 0; j < H; ++j) {
        const S ig = g[j], fg = g[H + j], gg = g[2 * H + j], og = g[3 * H + j];
        const S dh = dy_row[j] + dhn[j];
        const S d_o = dh * tc[j];
        const S dc = dh * og * (S(1) - tc[j] * tc[j]) + dcn[j];
        const S d_i = dc * gg;
        const S d_g = dc * ig;
        const S d_f = c_prev ? dc * c_prev[j] : S(0);
        dcn[j] = dc * fg;
        da[j] = d_i * ig * (S(1) - ig);
        da[H + j] = d_f * fg * (S(1) - fg);
        da[2 * H + j] = d_g * (S(1) - gg * gg);
        da[3 * H + j] = d_o * og * (S(1) - og);
      }
    }
    const auto dAt = dAm.middleRows(static_cast<Eigen::Index>(t * B), rows);
    as_matrix(dh_next, B, H).noalias() = dAt * Whh.transpose();
    if (t > 0) dWhh.noalias() += Hm.middleRows(static_cast<Eigen::Index>((t - 1) * B), rows).transpose() * dAt;
  }

  const auto Xm = as_matrix(st.x, T * B, In);
  as_matrix(w_ih.grad, In, 4 * H).noalias() += Xm.transpose() * dAm;
  VecMap<S>(bias.grad.data(), static_cast<Eigen::Index>(4 * H)) += dAm.colwise().sum();

  std::vector<S> dx_tm(T * B * In);
  as_matrix(dx_tm, T * B, In).noalias() = dAm * as_matrix(w_ih.data, In, 4 * H).transpose();
  Tensor<S> dx({B, T, In});
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t src_t = st.reverse ? T - 1 - t : t;
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(dx_tm.begin() + static_cast<std::ptrdiff_t>((t * B + b) * In), In,
                  dx.data.begin() + static_cast<std::ptrdiff_t>((b * T + src_t) * In));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Concatenation along channels, used by the bidirectional wrapper.

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  const std::size_t Ca = detail::channels_of(a), Cb = detail::channels_of(b);
  const std::size_t rows = a.size() / Ca;
  if (b.size() / Cb != rows) throw ShapeMismatch("concat row count mismatch");
  Shape shape = a.shape;
  shape.back() = Ca + Cb;
  Tensor<S> y(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data.begin() + static_cast<std::ptrdiff_t>(r * Ca), Ca, y.data.begin() + static_cast<std::ptrdiff_t>(r * (Ca + Cb)));
    std::copy_n(b.data.begin() + static_cast<std::ptrdiff_t>(r * Cb), Cb,
                y.data.begin() + static_cast<std::ptrdiff_t>(r * (Ca + Cb) + Ca));
  }
  return y;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& y, std::size_t first) {
  const std::size_t C = detail::channels_of(y);
  const std::size_t rows = y.size() / C;
  Shape sa = y.shape, sb = y.shape;
  sa.back() = first;
  sb.back() = C - first;
  Tensor<S> a(sa), b(sb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(y.data.begin() + static_cast<std::ptrdiff_t>(r * C), first, a.data.begin() + static_cast<std::ptrdiff_t>(r * first));
    std::copy_n(y.data.begin() + static_cast<std::ptrdiff_t>(r * C + first), C - first,
                b.data.begin() + static_cast<std::ptrdiff_t>(r * (C - first)));
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Dropout (inverted). Masks are a pure function of (seed, layer, step, index).

template <typename S>
Tensor<S> dropout_forward(const Tensor<S>& x, double p, Mode mode, std::uint64_t seed, std::uint64_t layer,
                          std::uint64_t step, std::vector<S>* mask = nullptr) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) {
    if (mask) mask->assign(x.size(), S(1));
    return x;
  }
  CounterRng rng(seed, CounterRng::hash(layer, step, 0xD50Dull));
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  Tensor<S> y(x.shape);
  if (mask) mask->resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S m = rng.uniform() < p ? S(0) : keep_scale;
    if (mask) (*mask)[i] = m;
    y.data[i] = x.data[i] * m;
  }
  return y;
}

template <typename S>
Tensor<S> dropout_backward(const std::vector<S>& mask, const Tensor<S>& dy) {
  if (mask.size() != dy.size()) throw ShapeMismatch("dropout mask size");
  Tensor<S> dx(dy.shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] = dy.data[i] * mask[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Linear, applied per frame: y = x W + b with W [In, Out].

template <typename S>
Tensor<S> linear_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
  const std::size_t In = detail::channels_of(x);
  require_rank(w, 2, "linear weight");
  if (w.dim(0) != In) throw ShapeMismatch("linear weight rows != input channels");
  const std::size_t Out = w.dim(1);
  require_shape(bias, {Out}, "linear bias");
  const std::size_t rows = x.size() / In;
  Shape shape = x.shape;
  shape.back() = Out;
  Tensor<S> y(shape);
  auto Y = as_matrix(y.data, rows, Out);
  Y.noalias() = as_matrix(x.data, rows, In) * as_matrix(w.data, In, Out);
  Y.rowwise() += ConstVecMap<S>(bias.data.data(), static_cast<Eigen::Index>(Out));
  return y;
}

template <typename S>
Tensor<S> linear_backward(const Tensor<S>& x, Tensor<S>& w, Tensor<S>& bias, const Tensor<S>& dy) {
  const std::size_t In = w.dim(0), Out = w.dim(1);
  const std::size_t rows = x.size() / In;
  if (dy.size() != rows * Out) throw ShapeMismatch("linear output gradient size");
  w.ensure_grad();
  bias.ensure_grad();
  const auto dY = as_matrix(dy.data, rows, Out);
  as_matrix(w.grad, In, Out).noalias() += as_matrix(x.data, rows, In).transpose() * dY;
  VecMap<S>(bias.grad.data(), static_cast<Eigen::Index>(Out)) += dY.colwise().sum();
  Tensor<S> dx(x.shape);
  as_matrix(dx.data, rows, In).noalias() = dY * as_matrix(w.data, In, Out).transpose();
  return dx;
}

}  // namespace ipascribe
