#pragma once

// Random instance builders shared by the unit tests.

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "gsmt/ingest.hpp"
#include "gsmt/tensor.hpp"

namespace testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<double> uniform_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> out(n);
  for (auto& v : out) v = uniform(rng, lo, hi);
  return out;
}

inline gsmt::Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, bool grad = false,
                                  double lo = -1.0, double hi = 1.0) {
  return gsmt::Tensor::matrix(rows, cols, uniform_values(rng, rows * cols, lo, hi), grad);
}

/// Stats spanning a few km around central Kuala Lumpur and 0..60 km/h.
inline gsmt::NormStats kl_stats() {
  gsmt::NormStats s;
  s.ranges = {{{3.10, 3.20}, {101.65, 101.75}, {0.0, 60.0}}};
  s.fitted = true;
  return s;
}

/// Normalised window with random contents.
inline gsmt::WindowSample random_window(Rng& rng, std::size_t l_in, std::size_t l_out, std::size_t nodes) {
  gsmt::WindowSample w;
  w.input = gsmt::FrameArray(l_in, nodes, 3);
  w.target = gsmt::FrameArray(l_out, nodes, 2);
  for (auto& v : w.input.values) v = uniform(rng, 0.0, 1.0);
  for (auto& v : w.target.values) v = uniform(rng, 0.0, 1.0);
  return w;
}

inline std::vector<std::size_t> random_permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace testing
