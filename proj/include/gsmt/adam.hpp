#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gsmt/tensor.hpp"

namespace gsmt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;  // one buffer per parameter
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update over `params`, reading each parameter's
/// accumulated gradient (a parameter without a gradient is treated as having
/// a zero gradient). Buffers are created on first use and must stay congruent
/// with the parameters afterwards.
void adam_step(std::span<Tensor> params, AdamState& state);

/// Same update on raw buffers; `grads[k]` must match `params[k]` in length.
void adam_step(std::span<std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state);

}  // namespace gsmt
