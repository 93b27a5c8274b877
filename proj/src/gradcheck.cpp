#include "gsmt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "gsmt/error.hpp"

namespace gsmt {

GradCheckResult gradient_check(const std::function<Tensor()>& fn, std::span<Tensor> inputs,
                               double step) {
  if (!(step > 0.0)) throw ContractError("gradient_check: step must be > 0");

  std::vector<bool> had_flag;
  for (auto& t : inputs) {
    had_flag.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = fn();
    if (loss.numel() != 1) throw ContractError("gradient_check: function is not scalar-valued");
    if (loss.requires_grad()) tape.backward(loss);
  }
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }

  auto evaluate = [&]() {
    const double value = fn().item();
    if (!std::isfinite(value)) throw NumericError("gradient_check: non-finite evaluation");
    return value;
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = evaluate();
      values[i] = saved - step;
      const double minus = evaluate();
      values[i] = saved;
      const double fd = (plus - minus) / (2.0 * step);
      const double err = std::fabs(analytic[k][i] - fd) / std::max(1.0, std::fabs(fd));
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].zero_grad();
    inputs[k].set_requires_grad(had_flag[k]);
  }
  return result;
}

}  // namespace gsmt
