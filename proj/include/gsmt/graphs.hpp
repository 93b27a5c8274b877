#pragma once

// Per-frame position and speed graphs over the fleet and their fusion into a
// single adjacency matrix per window (elementwise sum of all sources).

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "gsmt/ingest.hpp"

namespace gsmt {

struct AdjacencyMatrix {
  std::size_t n = 0;
  std::vector<double> weights;  // row-major n x n

  AdjacencyMatrix() = default;
  explicit AdjacencyMatrix(std::size_t size) : n(size), weights(size * size, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return weights[i * n + j]; }
  double at(std::size_t i, std::size_t j) const { return weights[i * n + j]; }
  bool is_symmetric() const;
};

struct FusedAdjacency {
  std::size_t n = 0;
  std::vector<double> weights;
  std::size_t source_count = 0;

  double at(std::size_t i, std::size_t j) const { return weights[i * n + j]; }
};

struct GraphConfig {
  double sigma_d_m = 1000.0;
  double sigma_v_kmh = 10.0;

  void validate() const;
};

/// a_ij = exp(-haversine(i, j) / sigma_d) off the diagonal, a_ii = 1.
/// Frames are in physical units (degrees, km/h).
AdjacencyMatrix build_position_graph(std::span<const Frame> nodes, double sigma_d_m);

/// a_ij = exp(-|v_i - v_j| / sigma_v) off the diagonal, a_ii = 1.
AdjacencyMatrix build_speed_graph(std::span<const Frame> nodes, double sigma_v_kmh);

/// Elementwise sum, accumulated left to right.
FusedAdjacency fuse(std::span<const AdjacencyMatrix> matrices);

/// Divides each row by its sum.
AdjacencyMatrix row_normalize(const FusedAdjacency& fused);

struct GraphFrame {
  std::vector<Frame> features;  // physical units
  AdjacencyMatrix position;
  AdjacencyMatrix speed;
};

struct DynamicGraphSeq {
  std::vector<GraphFrame> frames;
};

struct WindowGraph {
  DynamicGraphSeq sequence;
  FusedAdjacency fused;        // sum of position and speed graphs of every input frame
  AdjacencyMatrix normalized;  // row-normalised `fused`, consumed by the model
};

/// Builds both graphs for every input frame of a normalised window (using
/// `stats` to recover physical units) and fuses the 2*L_in matrices in the
/// order position_0, speed_0, position_1, ...
WindowGraph build_sequence(const WindowSample& window, const NormStats& stats,
                           const GraphConfig& config);

/// Debug dump: header `n,source_count`, then one line of values, then n rows.
void write_fused_csv(std::ostream& out, const FusedAdjacency& fused);

}  // namespace gsmt
