#include "gsmt/adam.hpp"

#include <cmath>
#include <string>

#include "gsmt/error.hpp"

namespace gsmt {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adam: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be > 0");
}

void adam_step(std::span<std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state) {
  state.config.validate();
  if (params.size() != grads.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty() && state.step == 0) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      state.m[k].assign(params[k].size(), 0.0);
      state.v[k].assign(params[k].size(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                        " buffers for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto n = params[k].size();
    if (grads[k].size() != n || state.m[k].size() != n || state.v[k].size() != n) {
      throw ContractError("adam_step: parameter " + std::to_string(k) +
                          " is not congruent with its gradient or moment buffers");
    }
  }

  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  std::vector<std::span<double>> values;
  std::vector<std::vector<double>> zero_grads;
  std::vector<std::span<const double>> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  zero_grads.reserve(params.size());
  for (auto& p : params) {
    values.push_back(p.mutable_values());
    if (p.has_grad()) {
      grads.push_back(p.grad());
    } else {
      zero_grads.emplace_back(p.numel(), 0.0);
      grads.push_back(zero_grads.back());
    }
  }
  adam_step(values, grads, state);
}

}  // namespace gsmt
