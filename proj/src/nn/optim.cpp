#include <cmath>

#include "pft/nn.hpp"

namespace pft::nn {

AdamState make_adam(const ParamStore& store, AdamConfig config) {
  if (!(config.lr >= 0) || !(config.beta1 >= 0 && config.beta1 < 1) || !(config.beta2 >= 0 && config.beta2 < 1) ||
      !(config.eps > 0))
    fail(ErrorKind::usage, "adam: invalid hyperparameters");
  AdamState s;
  s.config = config;
  s.m.resize(store.size());
  s.v.resize(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store.entry(i).trainable) continue;
    s.m[i].assign(store.entry(i).tensor.data.size(), 0.0);
    s.v[i].assign(store.entry(i).tensor.data.size(), 0.0);
  }
  return s;
}

void adam_step(ParamStore& store, const std::vector<std::vector<double>>& grads, AdamState& state) {
  if (grads.size() != store.size())
    fail(ErrorKind::shape, "adam: " + std::to_string(grads.size()) + " gradients for " +
                               std::to_string(store.size()) + " parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].empty() || !store.entry(i).trainable) continue;
    if (grads[i].size() != store.entry(i).tensor.data.size())
      fail(ErrorKind::shape, "adam: gradient size mismatch for '" + store.entry(i).name + "'");
    for (double g : grads[i])
      if (!std::isfinite(g)) fail(ErrorKind::numeric, "adam: non-finite gradient for '" + store.entry(i).name + "'");
  }
  state.m.resize(store.size());
  state.v.resize(store.size());
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1 - std::pow(c.beta1, t), bc2 = 1 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& e = store.entry(i);
    if (grads[i].empty() || !e.trainable) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != e.tensor.data.size()) m.assign(e.tensor.data.size(), 0.0);
    if (v.size() != e.tensor.data.size()) v.assign(e.tensor.data.size(), 0.0);
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = grads[i][j];
      m[j] = c.beta1 * m[j] + (1 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1 - c.beta2) * g * g;
      e.tensor.data[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
  }
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

}  // namespace pft::nn
