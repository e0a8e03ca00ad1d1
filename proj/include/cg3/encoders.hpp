#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cg3/autodiff.hpp"
#include "cg3/coarsen.hpp"
#include "cg3/graph.hpp"

namespace cg3::enc {

inline Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (double& x : w.values()) x = (2.0 * unit_uniform(rng) - 1.0) * limit;
  return w;
}

namespace detail {

// Trainable leaf for mutable parameters, constant alias for const ones.
inline Var bind(Tape& t, Parameter& p) { return t.param(p); }
inline Var bind(Tape& t, const Parameter& p) {
  return t.constant(std::shared_ptr<const Matrix>(std::shared_ptr<const Matrix>{}, &p.value));
}

inline void require_width(const Var& x, std::size_t expected, const std::string& where) {
  if (x.cols() != expected)
    throw DimensionError(where + ": input has " + std::to_string(x.cols()) +
                         " features, expected " + std::to_string(expected));
}

// Â (drop(h) W)
template <class P>
Var graph_conv(Tape& t, const graph::NormalizedAdjacency& adj, const Var& h, P& w, double rate,
               std::mt19937_64* rng) {
  const Var in = rng != nullptr ? dropout(h, rate, *rng) : h;
  return spmm(adj.matrix, matmul(in, bind(t, w)));
}

}  // namespace detail

/// Localized view: Â relu(Â X W0) W1.
class GcnEncoder {
 public:
  GcnEncoder(graph::NormalizedAdjacency adj, std::size_t in_dim, std::size_t hidden,
             std::size_t out_dim, std::uint64_t seed, double dropout = 0.0)
      : adj_(std::move(adj)), dropout_(dropout), rng_(graph::seeded_stream(seed, 101)) {
    auto init = graph::seeded_stream(seed, 100);
    w0_ = Parameter("gcn.w0", glorot_uniform(in_dim, hidden, init), true);
    w1_ = Parameter("gcn.w1", glorot_uniform(hidden, out_dim, init));
  }

  // Training-mode pass: parameters are tracked; dropout draws from the encoder's stream when `training`.
  Var forward(Tape& t, const Var& x, bool training) {
    return run(*this, t, x, training ? &rng_ : nullptr);
  }
  // Inference pass: parameters enter the tape as constants.
  Var forward(Tape& t, const Var& x) const { return run(*this, t, x, nullptr); }

  Matrix forward(const Matrix& x) const {
    Tape t;
    return forward(t, t.constant(x)).value();
  }

  std::vector<Parameter*> parameters() { return {&w0_, &w1_}; }
  Parameter& w0() { return w0_; }
  Parameter& w1() { return w1_; }
  const graph::NormalizedAdjacency& adjacency() const { return adj_; }
  std::size_t in_dim() const { return w0_.value.rows(); }
  std::size_t out_dim() const { return w1_.value.cols(); }

 private:
  template <class Self>
  static Var run(Self& self, Tape& t, const Var& x, std::mt19937_64* rng) {
    detail::require_width(x, self.w0_.value.rows(), "gcn layer 0");
    if (x.rows() != self.adj_.size())
      throw DimensionError("gcn: " + std::to_string(x.rows()) + " feature rows for a graph of " +
                           std::to_string(self.adj_.size()) + " nodes");
    const Var h = relu(detail::graph_conv(t, self.adj_, x, self.w0_, self.dropout_, rng));
    return detail::graph_conv(t, self.adj_, h, self.w1_, self.dropout_, rng);
  }

  graph::NormalizedAdjacency adj_;
  Parameter w0_;
  Parameter w1_;
  double dropout_;
  std::mt19937_64 rng_;
};

/// Global view: coarsen/convolve down to the bottom graph, then unpool back up
/// with skip connections to the same-level pre-pool features.
///
///   down k:  h_k = relu(Â_k drop(h) W_down_k); h = pool_k h_k
///   bottom:  h = relu(Â_L drop(h) W_bottom)
///   up k:    h = relu(Â_k drop([assign_k h, h_k]) W_up_k)       (k = L-1 .. 0)
///   output:  Â_0 drop(h) W_out
///
/// With zero levels this is exactly the two-layer GCN with W0 = W_bottom, W1 = W_out.
class HierEncoder {
 public:
  HierEncoder(graph::NormalizedAdjacency adj, std::vector<CoarsenLevel> levels, std::size_t in_dim,
              std::size_t hidden, std::size_t out_dim, std::uint64_t seed, double dropout = 0.0)
      : adj_(std::move(adj)),
        levels_(std::move(levels)),
        dropout_(dropout),
        rng_(graph::seeded_stream(seed, 201)) {
    auto init = graph::seeded_stream(seed, 200);
    std::size_t width = in_dim;
    for (std::size_t k = 0; k < levels_.size(); ++k) {
      down_.emplace_back("hier.down" + std::to_string(k), glorot_uniform(width, hidden, init), k == 0);
      width = hidden;
    }
    bottom_ = Parameter("hier.bottom", glorot_uniform(width, hidden, init), levels_.empty());
    for (std::size_t k = 0; k < levels_.size(); ++k)
      up_.emplace_back("hier.up" + std::to_string(k), glorot_uniform(2 * hidden, hidden, init));
    out_ = Parameter("hier.out", glorot_uniform(hidden, out_dim, init));
    for (std::size_t k = 0; k < levels_.size(); ++k) {
      const std::size_t expect = k == 0 ? adj_.size() : levels_[k - 1].coarse_nodes();
      if (levels_[k].fine_nodes() != expect)
        throw DimensionError("hier level " + std::to_string(k) + ": assignment has " +
                             std::to_string(levels_[k].fine_nodes()) + " fine nodes, expected " +
                             std::to_string(expect));
    }
  }

  Var forward(Tape& t, const Var& x, bool training) {
    return run(*this, t, x, training ? &rng_ : nullptr);
  }
  Var forward(Tape& t, const Var& x) const { return run(*this, t, x, nullptr); }

  Matrix forward(const Matrix& x) const {
    Tape t;
    return forward(t, t.constant(x)).value();
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> p;
    for (auto& w : down_) p.push_back(&w);
    p.push_back(&bottom_);
    for (auto& w : up_) p.push_back(&w);
    p.push_back(&out_);
    return p;
  }

  std::size_t depth() const noexcept { return levels_.size(); }
  const std::vector<CoarsenLevel>& levels() const noexcept { return levels_; }
  Parameter& bottom() { return bottom_; }
  Parameter& output() { return out_; }
  Parameter& down(std::size_t k) { return down_.at(k); }
  Parameter& up(std::size_t k) { return up_.at(k); }

 private:
  template <class Self>
  static Var run(Self& self, Tape& t, const Var& x, std::mt19937_64* rng) {
    const std::size_t in_dim = self.down_.empty() ? self.bottom_.value.rows() : self.down_[0].value.rows();
    detail::require_width(x, in_dim, "hier level 0");
    if (x.rows() != self.adj_.size())
      throw DimensionError("hier level 0: " + std::to_string(x.rows()) +
                           " feature rows for a graph of " + std::to_string(self.adj_.size()) +
                           " nodes");
    const double rate = self.dropout_;
    auto adj_at = [&](std::size_t k) -> const graph::NormalizedAdjacency& {
      return k == 0 ? self.adj_ : self.levels_[k - 1].coarse_normalized;
    };

    std::vector<Var> skips;
    Var h = x;
    for (std::size_t k = 0; k < self.levels_.size(); ++k) {
      h = relu(detail::graph_conv(t, adj_at(k), h, self.down_[k], rate, rng));
      skips.push_back(h);
      h = spmm(self.levels_[k].pool, h);
    }
    h = relu(detail::graph_conv(t, adj_at(self.levels_.size()), h, self.bottom_, rate, rng));
    for (std::size_t k = self.levels_.size(); k-- > 0;) {
      h = spmm(self.levels_[k].assign, h);
      if (h.rows() != skips[k].rows())
        throw DimensionError("hier level " + std::to_string(k) + ": unpooled rows " +
                             std::to_string(h.rows()) + " vs skip rows " +
                             std::to_string(skips[k].rows()));
      h = concat_cols({h, skips[k]});
      h = relu(detail::graph_conv(t, adj_at(k), h, self.up_[k], rate, rng));
    }
    return detail::graph_conv(t, self.adj_, h, self.out_, rate, rng);
  }

  graph::NormalizedAdjacency adj_;
  std::vector<CoarsenLevel> levels_;
  std::vector<Parameter> down_;
  Parameter bottom_;
  std::vector<Parameter> up_;
  Parameter out_;
  double dropout_;
  std::mt19937_64 rng_;
};

/// H^phi1 and H^phi2 for the same node order.
struct ViewEmbeddings {
  Var local;   // H^phi1
  Var global;  // H^phi2
};

inline ViewEmbeddings encode_views(GcnEncoder& gcn, HierEncoder& hier, Tape& t, const Var& x,
                                   bool training) {
  ViewEmbeddings v{gcn.forward(t, x, training), hier.forward(t, x, training)};
  if (!v.local.value().same_shape(v.global.value()))
    throw DimensionError("view shapes differ: " + v.local.value().shape() + " vs " +
                         v.global.value().shape());
  return v;
}

inline ViewEmbeddings encode_views(const GcnEncoder& gcn, const HierEncoder& hier, Tape& t,
                                   const Var& x) {
  ViewEmbeddings v{gcn.forward(t, x), hier.forward(t, x)};
  if (!v.local.value().same_shape(v.global.value()))
    throw DimensionError("view shapes differ: " + v.local.value().shape() + " vs " +
                         v.global.value().shape());
  return v;
}

}  // namespace cg3::enc
