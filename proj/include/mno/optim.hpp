#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mno/rng.hpp"
#include "mno/tensor.hpp"

namespace mno {

// Named parameter tensors in a stable order.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& add(const std::string& name, Tensor t) {
    for (auto& [n, _] : items)
      if (n == name) throw Error("duplicate parameter name: " + name);
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }

  Tensor& get(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw Error("unknown parameter: " + name);
  }

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    throw Error("unknown parameter: " + name);
  }

  bool has(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return true;
    return false;
  }

  int64_t total_size() const {
    int64_t s = 0;
    for (const auto& [n, t] : items) s += t.numel();
    return s;
  }
};

using GradMap = std::map<std::string, Tensor>;

// Decoupled weight decay Adam. Moments live here keyed by parameter name.
struct AdamWState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int64_t step = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // first, second
};

inline void adamw_step(AdamWState& state, ParamSet& params, const GradMap& grads) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params.items) {
    auto git = grads.find(name);
    if (git == grads.end()) throw Error("adamw_step: missing gradient for " + name);
    const Tensor& g = git->second;
    if (!g.same_shape(p))
      throw Error("adamw_step: gradient shape mismatch for " + name + ": " + shape_str(g.shape) +
                  " vs " + shape_str(p.shape));
    ensure_finite(g, "gradient of " + name);
    auto mit = state.moments.find(name);
    if (mit == state.moments.end())
      mit = state.moments.emplace(name, std::make_pair(Tensor::zeros(p.shape), Tensor::zeros(p.shape)))
                .first;
    Tensor& m = mit->second.first;
    Tensor& v = mit->second.second;
    if (!m.same_shape(p)) throw Error("adamw_step: moment shape mismatch for " + name);
    for (int64_t i = 0; i < p.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= state.lr * (mhat / (std::sqrt(vhat) + state.eps) + state.weight_decay * p[i]);
    }
  }
}

// Rescales the full gradient when its global l2 norm exceeds max_norm.
inline void clip_grad_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (auto& [name, g] : grads)
    for (double v : g.data) sq += v * v;
  double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  double s = max_norm / norm;
  for (auto& [name, g] : grads)
    for (auto& v : g.data) v *= s;
}

// Central finite-difference audit of analytic gradients. Samples up to
// n_samples scattered parameter entries and returns the worst relative error
// |analytic - fd| / max(|analytic|, |fd|, 1e-8).
inline double grad_check(const std::function<double()>& loss_fn, ParamSet& params,
                         const GradMap& analytic, int n_samples = 200, double h = 1e-5,
                         uint64_t seed = 0) {
  double base1 = loss_fn();
  double base2 = loss_fn();
  if (base1 != base2) throw Error("grad_check: loss is not deterministic under fixed inputs");

  std::vector<std::pair<size_t, int64_t>> entries;  // (param index, flat index)
  for (size_t pi = 0; pi < params.items.size(); ++pi)
    for (int64_t i = 0; i < params.items[pi].second.numel(); ++i) entries.emplace_back(pi, i);
  RngStream rng = make_stream(seed, 0xfdcULL);
  // partial Fisher-Yates to pick a scattered sample
  int take = std::min<int>(n_samples, static_cast<int>(entries.size()));
  for (int i = 0; i < take; ++i) {
    size_t j = i + static_cast<size_t>(rng.next_u64() % (entries.size() - static_cast<size_t>(i)));
    std::swap(entries[static_cast<size_t>(i)], entries[j]);
  }

  double worst = 0.0;
  for (int s = 0; s < take; ++s) {
    auto [pi, idx] = entries[static_cast<size_t>(s)];
    auto& [name, p] = params.items[pi];
    double saved = p[idx];
    p[idx] = saved + h;
    double up = loss_fn();
    p[idx] = saved - h;
    double dn = loss_fn();
    p[idx] = saved;
    double fd = (up - dn) / (2.0 * h);
    auto git = analytic.find(name);
    if (git == analytic.end()) throw Error("grad_check: missing analytic gradient for " + name);
    double an = git->second[idx];
    double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mno
