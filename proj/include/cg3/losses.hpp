#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cg3/autodiff.hpp"
#include "cg3/encoders.hpp"
#include "cg3/graph.hpp"

namespace cg3::loss {

using enc::ViewEmbeddings;

struct LossWeights {
  double lambda_phi1 = 0.5;  // share of H^phi1 in the fused output
  double lambda_ssc = 1.0;
  double lambda_g2 = 1.0;

  void validate() const {
    if (!(lambda_phi1 >= 0.0 && lambda_phi1 <= 1.0))
      throw ValidationError("lambda_phi1 must lie in [0,1]");
    if (!(lambda_ssc >= 0.0)) throw ValidationError("lambda_ssc must be non-negative");
    if (!(lambda_g2 >= 0.0)) throw ValidationError("lambda_g2 must be non-negative");
  }
};

struct ContrastOptions {
  bool normalize_rows = false;
  // Full n x n denominators; otherwise (or above exact_limit nodes) `negatives`
  // sampled partners per node stand in for the full sum.
  bool exact = true;
  std::size_t exact_limit = 25000;
  std::size_t negatives = 512;
  std::uint64_t seed = 0;

  bool use_exact(std::size_t n) const { return exact && n <= exact_limit; }
};

namespace detail {

inline void require_views(const ViewEmbeddings& v) {
  if (!v.local.value().same_shape(v.global.value()))
    throw DimensionError("contrastive views differ in shape: " + v.local.value().shape() + " vs " +
                         v.global.value().shape());
}

inline ViewEmbeddings maybe_normalize(const ViewEmbeddings& v, bool normalize) {
  if (!normalize) return v;
  return {l2_normalize_rows(v.local), l2_normalize_rows(v.global)};
}

}  // namespace detail

/// L_uc: symmetric cross-view InfoNCE with inner-product scores, averaged over 2n terms.
inline Var unsup_contrastive_loss(const ViewEmbeddings& views, const ContrastOptions& opt = {}) {
  detail::require_views(views);
  const auto v = detail::maybe_normalize(views, opt.normalize_rows);
  const std::size_t n = v.local.rows();
  if (n == 0) throw ValidationError("contrastive loss over zero nodes");
  const Var positive = row_inner_products(v.local, v.global);

  Var lse_local, lse_global;
  if (opt.use_exact(n)) {
    const Var scores = matmul(v.local, transpose(v.global));  // <h_i^1, h_j^2>
    lse_local = row_logsumexp(scores);
    lse_global = row_logsumexp(transpose(scores));
  } else {
    // Partner 0 is the node itself; the rest are uniform draws from the other nodes.
    const std::size_t k = std::min(opt.negatives, n - 1);
    auto rng = graph::seeded_stream(opt.seed, 301);
    std::uniform_int_distribution<std::size_t> pick(0, n - 2);
    std::vector<std::size_t> partners(n * (k + 1));
    for (std::size_t i = 0; i < n; ++i) {
      partners[i * (k + 1)] = i;
      for (std::size_t s = 1; s <= k; ++s) {
        std::size_t j = pick(rng);
        partners[i * (k + 1) + s] = j >= i ? j + 1 : j;
      }
    }
    lse_local = row_logsumexp(gathered_inner_products(v.local, v.global, partners, k + 1));
    lse_global = row_logsumexp(gathered_inner_products(v.global, v.local, std::move(partners), k + 1));
  }
  const Var total = reduce_sum(lse_local - positive) + reduce_sum(lse_global - positive);
  return scale(total, 1.0 / (2.0 * static_cast<double>(n)));
}

/// L_sc over the labeled nodes: same-class cross-view pairs (self included) form
/// the numerator, all labeled nodes the denominator.
inline Var sup_contrastive_loss(const ViewEmbeddings& views, std::span<const int> labels,
                                std::span<const std::size_t> labeled, bool normalize_rows = false) {
  detail::require_views(views);
  if (labeled.empty()) throw ValidationError("supervised contrastive loss needs labeled nodes");
  std::vector<int> y;
  y.reserve(labeled.size());
  for (std::size_t i : labeled) {
    if (i >= labels.size() || labels[i] == graph::kUnknownLabel)
      throw ValidationError("labeled node " + std::to_string(i) + " has no known class");
    y.push_back(labels[i]);
  }
  const std::size_t l = labeled.size();
  Matrix same(l, l);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t k = 0; k < l; ++k) same(i, k) = y[i] == y[k] ? 1.0 : 0.0;

  const std::vector<std::size_t> idx(labeled.begin(), labeled.end());
  const auto v = detail::maybe_normalize(
      ViewEmbeddings{gather_rows(views.local, idx), gather_rows(views.global, idx)}, normalize_rows);
  const Var scores = matmul(v.local, transpose(v.global));
  const Var scores_t = transpose(scores);
  const Var local_term = row_logsumexp(scores) - masked_row_logsumexp(scores, same);
  const Var global_term = row_logsumexp(scores_t) - masked_row_logsumexp(scores_t, same);
  return scale(reduce_sum(local_term) + reduce_sum(global_term), 1.0 / (2.0 * static_cast<double>(l)));
}

struct SscTerms {
  Var uc;
  Var sc;
  Var total;  // uc + sc
};

inline SscTerms ssc_loss(const ViewEmbeddings& v, std::span<const int> labels,
                         std::span<const std::size_t> labeled, const ContrastOptions& opt = {}) {
  SscTerms t;
  t.uc = unsup_contrastive_loss(v, opt);
  t.sc = sup_contrastive_loss(v, labels, labeled, opt.normalize_rows);
  t.total = t.uc + t.sc;
  return t;
}

/// Logistic edge model: p(e_ij = 1) = sigmoid([h_i^phi1, h_j^phi2] . w).
struct GenerativeHead {
  explicit GenerativeHead(std::size_t classes) : w("head.w", Matrix(2 * classes, 1)) {}

  Parameter w;
};

struct EdgeSampleBatch {
  std::vector<graph::Edge> positives;  // ordered pairs from observed edges, both orientations
  std::vector<graph::Edge> negatives;  // ordered non-edge pairs, i != j
  std::uint64_t seed = 0;
};

inline EdgeSampleBatch sample_edges(const SparseMatrix& adjacency, double negative_ratio,
                                    std::uint64_t seed) {
  if (!(negative_ratio >= 0.0)) throw ValidationError("negative ratio must be non-negative");
  const std::size_t n = adjacency.rows();
  EdgeSampleBatch b;
  b.seed = seed;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : adjacency.row_indices(i))
      if (i != j) b.positives.emplace_back(i, j);

  const std::size_t off_diagonal = n < 2 ? 0 : n * (n - 1);
  const std::size_t stored_off = b.positives.size();
  if (off_diagonal <= stored_off) return b;  // no non-edges exist

  const auto want = static_cast<std::size_t>(
      std::llround(negative_ratio * static_cast<double>(b.positives.size())));
  auto rng = graph::seeded_stream(seed, 401);
  std::uniform_int_distribution<std::size_t> node(0, n - 1);
  b.negatives.reserve(want);
  while (b.negatives.size() < want) {
    const std::size_t i = node(rng);
    const std::size_t j = node(rng);
    if (i == j || adjacency.contains(i, j)) continue;
    b.negatives.emplace_back(i, j);
  }
  return b;
}

/// Mean negative log-likelihood of the batch under the logistic edge model.
inline Var generative_loss(const Var& w, const ViewEmbeddings& v, const EdgeSampleBatch& batch) {
  if (w.cols() != 1 || w.rows() != v.local.cols() + v.global.cols())
    throw DimensionError("generative head " + w.value().shape() + " does not match views of width " +
                         std::to_string(v.local.cols()) + " + " + std::to_string(v.global.cols()));
  const std::size_t m = batch.positives.size() + batch.negatives.size();
  if (m == 0) return w.tape()->constant(Matrix(1, 1, 0.0));
  std::vector<std::size_t> src, dst;
  std::vector<double> targets;
  src.reserve(m);
  dst.reserve(m);
  targets.reserve(m);
  for (auto [i, j] : batch.positives) {
    src.push_back(i);
    dst.push_back(j);
    targets.push_back(1.0);
  }
  for (auto [i, j] : batch.negatives) {
    src.push_back(i);
    dst.push_back(j);
    targets.push_back(0.0);
  }
  const Var pairs = concat_cols({gather_rows(v.local, std::move(src)), gather_rows(v.global, std::move(dst))});
  const Var nll = logistic_nll(matmul(pairs, w), std::move(targets));
  return scale(reduce_sum(nll), 1.0 / static_cast<double>(m));
}

/// O = lambda_phi1 H^phi1 + (1 - lambda_phi1) H^phi2
inline Var fuse_outputs(const ViewEmbeddings& v, const LossWeights& lw) {
  return scale(v.local, lw.lambda_phi1) + scale(v.global, 1.0 - lw.lambda_phi1);
}

/// -sum over labeled i, classes j of Y_ij log softmax(O)_ij
inline Var cross_entropy_loss(const Var& o, const Matrix& y, std::span<const std::size_t> labeled) {
  if (labeled.empty()) throw ValidationError("cross-entropy over an empty labeled set");
  if (!o.value().same_shape(y))
    throw DimensionError("cross-entropy: output " + o.value().shape() + " vs labels " + y.shape());
  std::vector<std::size_t> idx(labeled.begin(), labeled.end());
  Matrix y_rows(idx.size(), y.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy(y.row(idx[r]).begin(), y.row(idx[r]).end(), y_rows.row(r).begin());
  const Var logp = row_log_softmax(gather_rows(o, std::move(idx)));
  return scale(reduce_sum(mul_const(logp, std::move(y_rows))), -1.0);
}

/// L = L_ce + lambda_ssc L_ssc + lambda_g2 L_g2
inline Var overall_loss(const Var& ce, const Var& ssc, const Var& g2, const LossWeights& lw) {
  return ce + (scale(ssc, lw.lambda_ssc) + scale(g2, lw.lambda_g2));
}

}  // namespace cg3::loss
