#include "gsmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "gsmt/error.hpp"

namespace gsmt {

namespace {

using Grads = std::span<std::vector<double>*>;
using OutGrad = std::span<const double>;

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

// out[i] = f(a[i]); backward multiplies by df(a[i], out[i]).
template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto saved = std::make_shared<const std::vector<double>>(out);
  return make_op_result(op, a.shape(), std::move(out), {&a},
                        [a, df, saved](OutGrad g, Grads grads) {
                          auto av = a.values();
                          auto& ga = *grads[0];
                          const auto& ov = *saved;
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(av[i], ov[i]);
                        });
}

double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return make_op_result("matmul", {m, n}, std::move(out), {&a, &b},
                        [a, b, m, k, n](OutGrad g, Grads grads) {
                          auto av = a.values();
                          auto bv = b.values();
                          if (grads[0]) {
                            auto& ga = *grads[0];
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                double acc = 0.0;
                                for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                                ga[i * k + p] += acc;
                              }
                          }
                          if (grads[1]) {
                            auto& gb = *grads[1];
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                const double aip = av[i * k + p];
                                if (aip == 0.0) continue;
                                for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                              }
                          }
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op_result("add", a.shape(), std::move(out), {&a, &b}, [](OutGrad g, Grads grads) {
    for (auto* slot : grads)
      if (slot)
        for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op_result("sub", a.shape(), std::move(out), {&a, &b}, [](OutGrad g, Grads grads) {
    if (grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
    if (grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op_result("mul", a.shape(), std::move(out), {&a, &b},
                        [a, b](OutGrad g, Grads grads) {
                          auto av = a.values();
                          auto bv = b.values();
                          if (grads[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * bv[i];
                          if (grads[1])
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * av[i];
                        });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_matrix("add_row", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  auto av = a.values();
  auto bv = bias.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
  return make_op_result("add_row", {m, n}, std::move(out), {&a, &bias},
                        [m, n](OutGrad g, Grads grads) {
                          if (grads[0])
                            for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                          if (grads[1])
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) (*grads[1])[j] += g[i * n + j];
                        });
}

Tensor scale(const Tensor& a, double factor) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_op_result("scale", a.shape(), std::move(out), {&a},
                        [factor](OutGrad g, Grads grads) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * factor;
                        });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor abs(const Tensor& a) {
  // Subgradient 0 at the kink.
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_op_result("sum", {1}, {acc}, {&a}, [](OutGrad g, Grads grads) {
    for (auto& x : *grads[0]) x += g[0];
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw DimensionError("mean: empty tensor");
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(n);
  return make_op_result("mean", {1}, {acc * inv}, {&a}, [inv](OutGrad g, Grads grads) {
    for (auto& x : *grads[0]) x += g[0] * inv;
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix("concat_cols", p);
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return make_op_result("concat_cols", {m, total}, std::move(out), inputs,
                        [m, total, widths](OutGrad g, Grads grads) {
                          std::size_t offset = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            const std::size_t w = widths[k];
                            if (grads[k])
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < w; ++j)
                                  (*grads[k])[i * w + j] += g[i * total + offset + j];
                            offset += w;
                          }
                        });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  auto av = a.values();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(av.data() + i * n + begin, w, out.data() + i * w);
  return make_op_result("slice_cols", {m, w}, std::move(out), {&a},
                        [m, n, w, begin](OutGrad g, Grads grads) {
                          auto& ga = *grads[0];
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto av = a.values();
  return make_op_result("reshape", std::move(shape), std::vector<double>(av.begin(), av.end()),
                        {&a}, [](OutGrad g, Grads grads) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                        });
}

Tensor masked_row_softmax(const Tensor& a, std::span<const std::uint8_t> allowed) {
  require_matrix("masked_row_softmax", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (allowed.size() != m * n) {
    throw DimensionError("masked_row_softmax: mask has " + std::to_string(allowed.size()) +
                         " entries for " + shape_str(a.shape()));
  }
  auto av = a.values();
  std::vector<double> out(m * n, 0.0);
  std::vector<double> terms;
  for (std::size_t i = 0; i < m; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (!allowed[i * n + j]) continue;
      any = true;
      peak = std::max(peak, av[i * n + j]);
    }
    if (!any) {
      throw ContractError("masked_row_softmax: row " + std::to_string(i) + " is fully masked");
    }
    terms.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (!allowed[i * n + j]) continue;
      out[i * n + j] = std::exp(av[i * n + j] - peak);
      terms.push_back(out[i * n + j]);
    }
    const double z = sorted_sum(terms);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  return make_op_result("masked_row_softmax", {m, n}, std::move(out), {&a},
                        [probs, m, n](OutGrad g, Grads grads) {
                          auto& ga = *grads[0];
                          const auto& p = *probs;
                          for (std::size_t i = 0; i < m; ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * p[i * n + j];
                            for (std::size_t j = 0; j < n; ++j)
                              ga[i * n + j] += p[i * n + j] * (g[i * n + j] - dot);
                          }
                        });
}

Tensor row_softmax(const Tensor& a) {
  require_matrix("row_softmax", a);
  std::vector<std::uint8_t> all(a.numel(), 1);
  return masked_row_softmax(a, all);
}

Tensor neighbor_sum(const Tensor& alpha, const Tensor& u) {
  require_matrix("neighbor_sum", alpha);
  require_matrix("neighbor_sum", u);
  const std::size_t m = alpha.rows(), n = alpha.cols(), d = u.cols();
  if (u.rows() != n) {
    throw DimensionError("neighbor_sum: " + shape_str(alpha.shape()) + " weights for " +
                         shape_str(u.shape()) + " features");
  }
  auto av = alpha.values();
  auto uv = u.values();
  std::vector<double> out(m * d);
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t j = 0; j < n; ++j) terms[j] = av[i * n + j] * uv[j * d + c];
      out[i * d + c] = sorted_sum(terms);
    }
  return make_op_result("neighbor_sum", {m, d}, std::move(out), {&alpha, &u},
                        [alpha, u, m, n, d](OutGrad g, Grads grads) {
                          auto av = alpha.values();
                          auto uv = u.values();
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j)
                              for (std::size_t c = 0; c < d; ++c) {
                                const double gic = g[i * d + c];
                                if (grads[0]) (*grads[0])[i * n + j] += gic * uv[j * d + c];
                                if (grads[1]) (*grads[1])[j * d + c] += gic * av[i * n + j];
                              }
                        });
}

Tensor pair_sum(const Tensor& p, const Tensor& q) {
  require_matrix("pair_sum", p);
  require_same_shape("pair_sum", p, q);
  const std::size_t n = p.rows(), h = p.cols();
  auto pv = p.values();
  auto qv = q.values();
  std::vector<double> out(n * n * h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double* row = out.data() + (i * n + j) * h;
      for (std::size_t c = 0; c < h; ++c) row[c] = pv[i * h + c] + qv[j * h + c];
    }
  return make_op_result("pair_sum", {n * n, h}, std::move(out), {&p, &q},
                        [n, h](OutGrad g, Grads grads) {
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < n; ++j) {
                              const double* row = g.data() + (i * n + j) * h;
                              if (grads[0])
                                for (std::size_t c = 0; c < h; ++c) (*grads[0])[i * h + c] += row[c];
                              if (grads[1])
                                for (std::size_t c = 0; c < h; ++c) (*grads[1])[j * h + c] += row[c];
                            }
                        });
}

}  // namespace gsmt
