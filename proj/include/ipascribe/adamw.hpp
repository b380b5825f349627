#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ipascribe/model.hpp"

namespace ipascribe {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamWOptions&) const = default;
};

/// First and second moments per trainable parameter, aligned with the
/// store's canonical order.
template <typename S>
struct OptimizerState {
  AdamWOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;
};

template <typename S>
OptimizerState<S> make_optimizer_state(const ParamStore<S>& params, AdamWOptions options = {}) {
  OptimizerState<S> st;
  st.options = options;
  for (const auto& e : params.entries()) {
    st.m.emplace_back(e.trainable ? e.value.size() : 0, S(0));
    st.v.emplace_back(e.trainable ? e.value.size() : 0, S(0));
  }
  return st;
}

/// One decoupled-weight-decay Adam step over every trainable parameter:
///   w <- w - lr*wd*w - lr * m_hat / (sqrt(v_hat) + eps)
template <typename S>
void adamw_step(ParamStore<S>& params, OptimizerState<S>& st) {
  auto& entries = params.entries();
  if (st.m.size() != entries.size() || st.v.size() != entries.size())
    throw ShapeMismatch("optimizer state does not match parameter store");
  ++st.step;
  const auto& o = st.options;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(st.step));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& e = entries[p];
    if (!e.trainable) continue;
    auto& w = e.value;
    if (w.grad.size() != w.size()) throw ShapeMismatch("missing gradient for " + e.name);
    if (st.m[p].size() != w.size() || st.v[p].size() != w.size())
      throw ShapeMismatch("optimizer moments do not match " + e.name);
    auto& m = st.m[p];
    auto& v = st.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = static_cast<double>(w.grad[i]);
      const double mi = o.beta1 * static_cast<double>(m[i]) + (1.0 - o.beta1) * g;
      const double vi = o.beta2 * static_cast<double>(v[i]) + (1.0 - o.beta2) * g * g;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      const double wi = static_cast<double>(w.data[i]);
      w.data[i] = static_cast<S>(wi - o.lr * o.weight_decay * wi - o.lr * m_hat / (std::sqrt(v_hat) + o.eps));
    }
  }
}

}  // namespace ipascribe
