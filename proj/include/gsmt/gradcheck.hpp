#pragma once

#include <functional>
#include <span>

#include "gsmt/tensor.hpp"

namespace gsmt {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of coordinates compared
};

/// Compares tape gradients of the scalar `fn()` with respect to every tensor
/// in `inputs` against central differences with step `step`. `fn` is called
/// once under a fresh tape and then twice per coordinate without one.
///
/// The error per coordinate is |g_ad - g_fd| / max(1, |g_fd|); the maximum is
/// returned. Throws NumericError if any evaluation is non-finite.
GradCheckResult gradient_check(const std::function<Tensor()>& fn, std::span<Tensor> inputs,
                               double step = 1e-6);

}  // namespace gsmt
