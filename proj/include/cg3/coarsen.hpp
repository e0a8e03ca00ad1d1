#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "cg3/graph.hpp"
#include "cg3/matrix.hpp"

namespace cg3::enc {

/// One coarsening step: fine graph -> hyper-node graph.
struct CoarsenLevel {
  std::shared_ptr<const SparseMatrix> assign;  // fine x coarse, a single 1 per row
  std::shared_ptr<const SparseMatrix> pool;    // coarse x fine, each row averages its members
  SparseMatrix coarse_adjacency;               // 0/1, symmetric, zero diagonal
  graph::NormalizedAdjacency coarse_normalized;

  std::size_t fine_nodes() const { return assign->rows(); }
  std::size_t coarse_nodes() const { return assign->cols(); }
};

namespace detail {

// |N[u] & N[v]| / |N[u] | N[v]| over closed neighbourhoods.
inline double closed_jaccard(const SparseMatrix& a, std::size_t u, std::size_t v) {
  auto closed = [&](std::size_t x) {
    std::vector<std::size_t> s(a.row_indices(x).begin(), a.row_indices(x).end());
    s.insert(std::lower_bound(s.begin(), s.end(), x), x);
    return s;
  };
  const auto nu = closed(u);
  const auto nv = closed(v);
  std::size_t inter = 0, i = 0, j = 0;
  while (i < nu.size() && j < nv.size()) {
    if (nu[i] == nv[j]) {
      ++inter, ++i, ++j;
    } else if (nu[i] < nv[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = nu.size() + nv.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace detail

/// Hyper-node id of every fine node for one greedy matching pass. Nodes are
/// visited in ascending id; each unmatched node pairs with the unmatched
/// neighbour of highest closed-neighbourhood Jaccard similarity (lowest id on
/// ties) or stays a singleton. Hyper-node ids follow visit order.
inline std::vector<std::size_t> match_nodes(const SparseMatrix& a) {
  const std::size_t n = a.rows();
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> hyper(n, kUnset);
  std::size_t next = 0;
  for (std::size_t u = 0; u < n; ++u) {
    if (hyper[u] != kUnset) continue;
    std::size_t best = kUnset;
    double best_score = -1.0;
    for (std::size_t v : a.row_indices(u)) {
      if (v == u || hyper[v] != kUnset) continue;
      const double s = detail::closed_jaccard(a, u, v);
      if (s > best_score) {
        best_score = s;
        best = v;
      }
    }
    hyper[u] = next;
    if (best != kUnset) hyper[best] = next;
    ++next;
  }
  return hyper;
}

inline CoarsenLevel coarsen_once(const SparseMatrix& a) {
  const std::size_t n = a.rows();
  const auto hyper = match_nodes(a);
  const std::size_t m = n == 0 ? 0 : *std::max_element(hyper.begin(), hyper.end()) + 1;

  std::vector<std::size_t> members(m, 0);
  for (std::size_t h : hyper) ++members[h];

  std::vector<SparseMatrix::Triplet> s, p;
  s.reserve(n);
  p.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back({i, hyper[i], 1.0});
    p.push_back({hyper[i], i, 1.0 / static_cast<double>(members[hyper[i]])});
  }

  // S^T (A + I) S, binarized, diagonal dropped.
  std::vector<graph::Edge> coarse_edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : a.row_indices(i))
      if (i < j && hyper[i] != hyper[j]) coarse_edges.emplace_back(hyper[i], hyper[j]);

  CoarsenLevel lvl;
  lvl.assign = std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(n, m, std::move(s)));
  lvl.pool = std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(m, n, std::move(p)));
  lvl.coarse_adjacency = graph::adjacency_from_edges(m, coarse_edges);
  lvl.coarse_normalized = graph::normalize_adjacency(lvl.coarse_adjacency);
  return lvl;
}

/// Up to `levels` coarsening steps. Stops early once the current graph has fewer
/// than two nodes; the returned size is the depth actually built.
inline std::vector<CoarsenLevel> build_coarsening(const SparseMatrix& a, std::size_t levels) {
  if (a.rows() != a.cols()) throw ValidationError("coarsening needs a square adjacency");
  std::vector<CoarsenLevel> out;
  out.reserve(levels);
  const SparseMatrix* current = &a;
  for (std::size_t k = 0; k < levels; ++k) {
    if (current->rows() < 2) break;
    out.push_back(coarsen_once(*current));
    current = &out.back().coarse_adjacency;
  }
  return out;
}

}  // namespace cg3::enc
