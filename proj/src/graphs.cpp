#include "gsmt/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

#include "gsmt/error.hpp"
#include "gsmt/geo.hpp"

namespace gsmt {

bool AdjacencyMatrix::is_symmetric() const {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (at(i, j) != at(j, i)) return false;
  return true;
}

void GraphConfig::validate() const {
  if (!(sigma_d_m > 0.0)) throw ConfigError("graph: sigma_d must be > 0");
  if (!(sigma_v_kmh > 0.0)) throw ConfigError("graph: sigma_v must be > 0");
}

AdjacencyMatrix build_position_graph(std::span<const Frame> nodes, double sigma_d_m) {
  if (nodes.size() < 2) throw ContractError("build_position_graph: need at least 2 nodes");
  if (!(sigma_d_m > 0.0)) throw ContractError("build_position_graph: sigma_d must be > 0");
  for (const auto& f : nodes) {
    if (!std::isfinite(f.lat) || !std::isfinite(f.lon)) {
      throw NumericError("build_position_graph: non-finite coordinates");
    }
  }
  AdjacencyMatrix a(nodes.size());
  for (std::size_t i = 0; i < a.n; ++i) {
    a.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < a.n; ++j) {
      const double d = geo::haversine_m({nodes[i].lat, nodes[i].lon}, {nodes[j].lat, nodes[j].lon});
      a.at(i, j) = a.at(j, i) = std::exp(-d / sigma_d_m);
    }
  }
  return a;
}

AdjacencyMatrix build_speed_graph(std::span<const Frame> nodes, double sigma_v_kmh) {
  if (nodes.size() < 2) throw ContractError("build_speed_graph: need at least 2 nodes");
  if (!(sigma_v_kmh > 0.0)) throw ContractError("build_speed_graph: sigma_v must be > 0");
  for (const auto& f : nodes) {
    if (!std::isfinite(f.speed)) throw NumericError("build_speed_graph: non-finite speed");
    if (f.speed < 0.0) throw ContractError("build_speed_graph: negative speed");
  }
  AdjacencyMatrix a(nodes.size());
  for (std::size_t i = 0; i < a.n; ++i) {
    a.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < a.n; ++j) {
      a.at(i, j) = a.at(j, i) = std::exp(-std::fabs(nodes[i].speed - nodes[j].speed) / sigma_v_kmh);
    }
  }
  return a;
}

FusedAdjacency fuse(std::span<const AdjacencyMatrix> matrices) {
  if (matrices.empty()) throw ContractError("fuse: empty matrix list");
  FusedAdjacency out;
  out.n = matrices.front().n;
  out.weights.assign(out.n * out.n, 0.0);
  for (const auto& m : matrices) {
    if (m.n != out.n || m.weights.size() != out.n * out.n) {
      throw DimensionError("fuse: matrices of size " + std::to_string(out.n) + " and " +
                           std::to_string(m.n) + " cannot be fused");
    }
    for (std::size_t k = 0; k < out.weights.size(); ++k) out.weights[k] += m.weights[k];
  }
  out.source_count = matrices.size();
  return out;
}

AdjacencyMatrix row_normalize(const FusedAdjacency& fused) {
  AdjacencyMatrix a(fused.n);
  for (std::size_t i = 0; i < fused.n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < fused.n; ++j) total += fused.at(i, j);
    if (!(total > 0.0)) {
      throw ContractError("row_normalize: row " + std::to_string(i) + " sums to zero");
    }
    for (std::size_t j = 0; j < fused.n; ++j) a.at(i, j) = fused.at(i, j) / total;
  }
  return a;
}

WindowGraph build_sequence(const WindowSample& window, const NormStats& stats,
                           const GraphConfig& config) {
  config.validate();
  const auto& in = window.input;
  WindowGraph g;
  std::vector<AdjacencyMatrix> sources;
  sources.reserve(2 * in.steps);
  for (std::size_t s = 0; s < in.steps; ++s) {
    GraphFrame frame;
    frame.features.reserve(in.nodes);
    for (std::size_t b = 0; b < in.nodes; ++b) {
      auto f = stats.denormalize(Frame{in.at(s, b, 0), in.at(s, b, 1), in.at(s, b, 2)});
      f.speed = std::max(f.speed, 0.0);  // round-off below a zero minimum
      frame.features.push_back(f);
    }
    frame.position = build_position_graph(frame.features, config.sigma_d_m);
    frame.speed = build_speed_graph(frame.features, config.sigma_v_kmh);
    sources.push_back(frame.position);
    sources.push_back(frame.speed);
    g.sequence.frames.push_back(std::move(frame));
  }
  g.fused = fuse(sources);
  g.normalized = row_normalize(g.fused);
  return g;
}

void write_fused_csv(std::ostream& out, const FusedAdjacency& fused) {
  out << "n,source_count\n" << fused.n << ',' << fused.source_count << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < fused.n; ++i) {
    for (std::size_t j = 0; j < fused.n; ++j) out << (j ? "," : "") << fused.at(i, j);
    out << '\n';
  }
}

}  // namespace gsmt
