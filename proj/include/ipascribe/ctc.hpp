#pragma once

// Connectionist temporal classification: loss with exact forward-backward
// gradient, and greedy decoding.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "ipascribe/ipa.hpp"
#include "ipascribe/tensor.hpp"

namespace ipascribe {

/// Output classes of the acoustic model: 37 phonemes followed by the blank.
inline constexpr std::size_t kOutputClasses = kPhonemeCount + 1;
inline constexpr std::size_t kBlank = kPhonemeCount;

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace detail

/// Row-wise log-softmax over the last axis.
template <typename S>
Tensor<S> log_softmax(const Tensor<S>& logits) {
  const std::size_t C = logits.shape.back();
  const std::size_t rows = logits.size() / C;
  Tensor<S> out(logits.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* x = logits.data.data() + r * C;
    const S hi = *std::max_element(x, x + C);
    double sum = 0.0;
    for (std::size_t k = 0; k < C; ++k) sum += std::exp(static_cast<double>(x[k] - hi));
    const S lse = hi + static_cast<S>(std::log(sum));
    for (std::size_t k = 0; k < C; ++k) out.data[r * C + k] = x[k] - lse;
  }
  return out;
}

/// Gradient through log-softmax: dx = dy - softmax * sum(dy).
template <typename S>
Tensor<S> log_softmax_backward(const Tensor<S>& logp, const Tensor<S>& dlogp) {
  const std::size_t C = logp.shape.back();
  const std::size_t rows = logp.size() / C;
  Tensor<S> dx(logp.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < C; ++k) total += static_cast<double>(dlogp.data[r * C + k]);
    for (std::size_t k = 0; k < C; ++k)
      dx.data[r * C + k] =
          dlogp.data[r * C + k] - static_cast<S>(std::exp(static_cast<double>(logp.data[r * C + k])) * total);
  }
  return dx;
}

/// Shortest frame count that can emit `labels`: one frame per label plus a
/// separating blank between equal neighbours.
inline std::size_t ctc_min_frames(std::span<const std::size_t> labels) {
  std::size_t need = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++need;
  return need;
}

template <typename S>
struct CtcResult {
  double loss = 0.0;      // -log P(labels | logp)
  std::vector<S> grad;    // d loss / d logp, [T, C] row-major
};

/// CTC negative log-likelihood of `labels` under per-frame log-probabilities
/// `logp` ([T, C], blank = `blank`), with its exact gradient with respect to
/// `logp`. Computed entirely in log space.
template <typename S>
CtcResult<S> ctc_loss(const Tensor<S>& logp, std::span<const std::size_t> labels, std::size_t blank) {
  using detail::kNegInf;
  using detail::log_add;
  require_rank(logp, 2, "ctc log-probabilities");
  const std::size_t T = logp.dim(0), C = logp.dim(1);
  if (blank >= C) throw ShapeMismatch("blank id outside class range");
  for (std::size_t l : labels)
    if (l >= C || l == blank) throw ShapeMismatch("label id invalid for CTC");
  if (T == 0 || T < ctc_min_frames(labels)) throw InfeasibleLength(T, std::max<std::size_t>(1, ctc_min_frames(labels)));

  const std::size_t L = labels.size();
  const std::size_t Sx = 2 * L + 1;
  std::vector<std::size_t> ext(Sx, blank);
  for (std::size_t i = 0; i < L; ++i) ext[2 * i + 1] = labels[i];
  auto lp = [&](std::size_t t, std::size_t s) { return static_cast<double>(logp.data[t * C + ext[s]]); };
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(T * Sx, kNegInf), beta(T * Sx, kNegInf);
  alpha[0] = lp(0, 0);
  if (Sx > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < Sx; ++s) {
      double a = alpha[(t - 1) * Sx + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * Sx + s - 1]);
      if (can_skip(s)) a = log_add(a, alpha[(t - 1) * Sx + s - 2]);
      alpha[t * Sx + s] = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  }
  beta[(T - 1) * Sx + Sx - 1] = lp(T - 1, Sx - 1);
  if (Sx > 1) beta[(T - 1) * Sx + Sx - 2] = lp(T - 1, Sx - 2);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < Sx; ++s) {
      double b = beta[(t + 1) * Sx + s];
      if (s + 1 < Sx) b = log_add(b, beta[(t + 1) * Sx + s + 1]);
      if (s + 2 < Sx && can_skip(s + 2)) b = log_add(b, beta[(t + 1) * Sx + s + 2]);
      beta[t * Sx + s] = b == kNegInf ? kNegInf : b + lp(t, s);
    }
  }

  double log_p = alpha[(T - 1) * Sx + Sx - 1];
  if (Sx > 1) log_p = log_add(log_p, alpha[(T - 1) * Sx + Sx - 2]);
  if (!std::isfinite(log_p)) throw NumericError("CTC likelihood is zero or not finite");

  CtcResult<S> out;
  out.loss = -log_p;
  out.grad.assign(T * C, S(0));
  std::vector<double> occ(C);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occ.begin(), occ.end(), kNegInf);
    for (std::size_t s = 0; s < Sx; ++s) {
      const double ab = alpha[t * Sx + s] + beta[t * Sx + s];
      if (ab != kNegInf) occ[ext[s]] = log_add(occ[ext[s]], ab - lp(t, s));
    }
    for (std::size_t k = 0; k < C; ++k)
      if (occ[k] != kNegInf) out.grad[t * C + k] = static_cast<S>(-std::exp(occ[k] - log_p));
  }
  return out;
}

template <typename S>
CtcResult<S> ctc_loss(const Tensor<S>& logp, const PhonemeSeq& labels) {
  std::vector<std::size_t> ids;
  ids.reserve(labels.size());
  for (Phoneme p : labels) ids.push_back(p.id());
  return ctc_loss(logp, std::span<const std::size_t>(ids), kBlank);
}

/// Per-frame argmax (lowest id on ties), collapse of repeated frames, blank
/// removal, then a final merge of adjacent identical labels so that even
/// blank-separated repeats collapse to one.
template <typename S>
std::vector<std::size_t> greedy_decode_ids(const Tensor<S>& logp, std::size_t blank) {
  require_rank(logp, 2, "decoder input");
  const std::size_t T = logp.dim(0), C = logp.dim(1);
  std::vector<std::size_t> out;
  std::size_t prev_frame = C;  // sentinel, never a class id
  for (std::size_t t = 0; t < T; ++t) {
    const S* row = logp.data.data() + t * C;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + C) - row);
    if (best != prev_frame && best != blank && (out.empty() || out.back() != best)) out.push_back(best);
    prev_frame = best;
  }
  return out;
}

template <typename S>
PhonemeSeq greedy_decode(const Tensor<S>& logp) {
  if (logp.rank() != 2 || logp.dim(1) != kOutputClasses) throw ShapeMismatch("decoder expects [T, 38]");
  PhonemeSeq out;
  for (std::size_t id : greedy_decode_ids(logp, kBlank)) out.emplace_back(static_cast<std::uint8_t>(id));
  return out;
}

}  // namespace ipascribe
