#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "camnet/errors.hpp"

namespace camnet {

struct Adjacency {
  int n = 0;
  std::vector<std::pair<int, int>> edges;  // ordered (src, dst), sorted
  bool self_loops = true;

  bool has_edge(int src, int dst) const {
    return std::binary_search(edges.begin(), edges.end(), std::make_pair(src, dst));
  }
};

enum class GraphStrategy { AllToAll, Knn, Distance };

struct GraphConfig {
  GraphStrategy strategy = GraphStrategy::Distance;
  int k = 4;                  // knn only
  double threshold_m = 30.0;  // distance only
};

inline GraphConfig parse_graph_config(const std::string& s) {
  GraphConfig cfg;
  if (s == "all_to_all") {
    cfg.strategy = GraphStrategy::AllToAll;
  } else if (s.rfind("knn(", 0) == 0 && s.back() == ')') {
    cfg.strategy = GraphStrategy::Knn;
    try {
      cfg.k = std::stoi(s.substr(4, s.size() - 5));
    } catch (...) {
      throw_error(ErrorKind::Config, "bad graph strategy: " + s);
    }
    if (cfg.k < 0) throw_error(ErrorKind::Config, "knn: k must be >= 0");
  } else if (s.rfind("distance(", 0) == 0 && s.back() == ')') {
    cfg.strategy = GraphStrategy::Distance;
    try {
      cfg.threshold_m = std::stod(s.substr(9, s.size() - 10));
    } catch (...) {
      throw_error(ErrorKind::Config, "bad graph strategy: " + s);
    }
    if (cfg.threshold_m < 0) throw_error(ErrorKind::Config, "distance: threshold must be >= 0");
  } else {
    throw_error(ErrorKind::Config,
                "unknown graph strategy '" + s +
                    "' (expected all_to_all, knn(k), or distance(meters))");
  }
  return cfg;
}

inline std::string graph_config_name(const GraphConfig& cfg) {
  switch (cfg.strategy) {
    case GraphStrategy::AllToAll: return "all_to_all";
    case GraphStrategy::Knn: return "knn(" + std::to_string(cfg.k) + ")";
    case GraphStrategy::Distance: {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "distance(%g)", cfg.threshold_m);
      return buf;
    }
  }
  return "?";
}

namespace detail {

inline void finish_adjacency(Adjacency& adj, const std::vector<bool>& valid) {
  for (int i = 0; i < adj.n; ++i)
    if (valid[i]) adj.edges.emplace_back(i, i);
  std::sort(adj.edges.begin(), adj.edges.end());
  adj.edges.erase(std::unique(adj.edges.begin(), adj.edges.end()), adj.edges.end());
}

}  // namespace detail

// Complete digraph over valid agents, self-loops included.
inline Adjacency all_to_all(const std::vector<bool>& valid) {
  Adjacency adj;
  adj.n = (int)valid.size();
  if (adj.n < 1) throw_error(ErrorKind::Config, "all_to_all: need n >= 1");
  for (int i = 0; i < adj.n; ++i) {
    if (!valid[i]) continue;
    for (int j = 0; j < adj.n; ++j)
      if (valid[j] && j != i) adj.edges.emplace_back(i, j);
  }
  detail::finish_adjacency(adj, valid);
  return adj;
}

// Out-edges from each valid agent to its min(k, n_valid-1) nearest valid
// agents by planar l2 distance; equal distances break toward the lower index.
inline Adjacency knn(const std::vector<std::pair<double, double>>& positions,
                     const std::vector<bool>& valid, int k) {
  if (positions.size() != valid.size())
    throw_error(ErrorKind::ShapeMismatch, "knn: positions/valid size mismatch");
  if (k < 0) throw_error(ErrorKind::Config, "knn: k must be >= 0");
  Adjacency adj;
  adj.n = (int)valid.size();
  if (adj.n < 1) throw_error(ErrorKind::Config, "knn: need n >= 1");
  for (int i = 0; i < adj.n; ++i) {
    if (!valid[i]) continue;
    std::vector<std::pair<double, int>> cand;  // (distance, index)
    for (int j = 0; j < adj.n; ++j) {
      if (j == i || !valid[j]) continue;
      double dx = positions[j].first - positions[i].first;
      double dy = positions[j].second - positions[i].second;
      cand.emplace_back(std::hypot(dx, dy), j);
    }
    int take = std::min<int>(k, (int)cand.size());
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
    for (int t = 0; t < take; ++t) adj.edges.emplace_back(i, cand[t].second);
  }
  detail::finish_adjacency(adj, valid);
  return adj;
}

// Symmetric edges between valid agents strictly closer than threshold; plus
// self-loops.
inline Adjacency distance_based(const std::vector<std::pair<double, double>>& positions,
                                const std::vector<bool>& valid, double threshold_m) {
  if (positions.size() != valid.size())
    throw_error(ErrorKind::ShapeMismatch, "distance_based: positions/valid size mismatch");
  if (threshold_m < 0)
    throw_error(ErrorKind::Config, "distance_based: threshold must be >= 0");
  Adjacency adj;
  adj.n = (int)valid.size();
  if (adj.n < 1) throw_error(ErrorKind::Config, "distance_based: need n >= 1");
  for (int i = 0; i < adj.n; ++i) {
    if (!valid[i]) continue;
    for (int j = i + 1; j < adj.n; ++j) {
      if (!valid[j]) continue;
      double dx = positions[j].first - positions[i].first;
      double dy = positions[j].second - positions[i].second;
      if (std::hypot(dx, dy) < threshold_m) {
        adj.edges.emplace_back(i, j);
        adj.edges.emplace_back(j, i);
      }
    }
  }
  detail::finish_adjacency(adj, valid);
  return adj;
}

inline Adjacency build_adjacency(const GraphConfig& cfg,
                                 const std::vector<std::pair<double, double>>& positions,
                                 const std::vector<bool>& valid) {
  switch (cfg.strategy) {
    case GraphStrategy::AllToAll: return all_to_all(valid);
    case GraphStrategy::Knn: return knn(positions, valid, cfg.k);
    case GraphStrategy::Distance: return distance_based(positions, valid, cfg.threshold_m);
  }
  throw_error(ErrorKind::Config, "unknown graph strategy");
}

}  // namespace camnet
