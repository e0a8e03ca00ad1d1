#pragma once

// Independent reference implementations used by the tests. None of these call
// into the autodiff tape or the stabilized kernels they are checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "cg3/autodiff.hpp"
#include "cg3/graph.hpp"
#include "cg3/matrix.hpp"

namespace oracle {

using cg3::Matrix;

// Small hand-rolled generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  std::size_t between(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool coin(double p) { return uniform(0.0, 1.0) < p; }

  Matrix matrix(std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (double& v : m.values()) v = uniform(-scale, scale);
    return m;
  }

  // Entries bounded away from zero, for ops with a kink at 0.
  Matrix matrix_away_from_zero(std::size_t r, std::size_t c, double lo = 0.1, double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.values()) v = (coin(0.5) ? 1.0 : -1.0) * uniform(lo, hi);
    return m;
  }

  std::vector<cg3::graph::Edge> edges(std::size_t n, double p) {
    std::vector<cg3::graph::Edge> e;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (coin(p)) e.emplace_back(i, j);
    return e;
  }

  std::vector<int> labels(std::size_t n, int classes) {
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(index(static_cast<std::size_t>(classes)));
    return y;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Finite differences

// Central differences of f at x, step h.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                               double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = probe.values()[k];
    probe.values()[k] = orig + h;
    const double up = f(probe);
    probe.values()[k] = orig - h;
    const double down = f(probe);
    probe.values()[k] = orig;
    g.values()[k] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), with an absolute floor for near-zero gradients.
inline double relative_error(const Matrix& a, const Matrix& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a.values()[k] - b.values()[k];
    diff += d * d;
    na += a.values()[k] * a.values()[k];
    nb += b.values()[k] * b.values()[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-7});
}

using Builder = std::function<cg3::Var(cg3::Tape&, const std::vector<cg3::Var>&)>;

// Worst relative error over all inputs between tape gradients and central
// differences of sum(out .* R), R a fixed random projection.
inline double gradient_check(const Builder& build, const std::vector<Matrix>& inputs,
                             std::uint64_t seed = 7) {
  Matrix projection;
  {
    cg3::Tape t;
    std::vector<cg3::Var> leaves;
    for (const auto& m : inputs) leaves.push_back(t.constant(m));
    const cg3::Var out = build(t, leaves);
    Gen g(seed);
    projection = g.matrix(out.rows(), out.cols());
  }
  auto scalar = [&](const std::vector<Matrix>& xs) {
    cg3::Tape t;
    std::vector<cg3::Var> leaves;
    for (const auto& m : xs) leaves.push_back(t.constant(m));
    const Matrix& o = build(t, leaves).value();
    double s = 0.0;
    for (std::size_t k = 0; k < o.size(); ++k) s += o.values()[k] * projection.values()[k];
    return s;
  };

  std::vector<cg3::Parameter> params;
  params.reserve(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) params.emplace_back("x" + std::to_string(k), inputs[k]);
  cg3::Tape t;
  std::vector<cg3::Var> leaves;
  for (auto& p : params) leaves.push_back(t.param(p));
  const cg3::Var loss = cg3::reduce_sum(cg3::mul_const(build(t, leaves), projection));
  t.backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Matrix& xk) {
      auto xs = inputs;
      xs[k] = xk;
      return scalar(xs);
    };
    worst = std::max(worst, relative_error(params[k].grad, numeric_gradient(f, inputs[k])));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Naive losses: direct summation of exponentials, no stabilization.

inline double dot(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
  return s;
}

inline Matrix normalize_rows(const Matrix& h) {
  Matrix out = h;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double n = 0.0;
    for (double v : h.row(i)) n += v * v;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& v : out.row(i)) v /= n;
  }
  return out;
}

inline double unsup_contrastive(const Matrix& h1, const Matrix& h2) {
  const std::size_t n = h1.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d12 = 0.0, d21 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      d12 += std::exp(dot(h1, i, h2, j));
      d21 += std::exp(dot(h2, i, h1, j));
    }
    total += -std::log(std::exp(dot(h1, i, h2, i)) / d12);
    total += -std::log(std::exp(dot(h2, i, h1, i)) / d21);
  }
  return total / (2.0 * static_cast<double>(n));
}

inline double sup_contrastive(const Matrix& h1, const Matrix& h2, const std::vector<int>& labels,
                              const std::vector<std::size_t>& labeled) {
  const std::size_t l = labeled.size();
  double total = 0.0;
  for (std::size_t a = 0; a < l; ++a) {
    const std::size_t i = labeled[a];
    double num12 = 0.0, den12 = 0.0, num21 = 0.0, den21 = 0.0;
    for (std::size_t b = 0; b < l; ++b) {
      const std::size_t k = labeled[b];
      const double e12 = std::exp(dot(h1, i, h2, k));
      const double e21 = std::exp(dot(h2, i, h1, k));
      den12 += e12;
      den21 += e21;
      if (labels[i] == labels[k]) {
        num12 += e12;
        num21 += e21;
      }
    }
    total += -std::log(num12 / den12) - std::log(num21 / den21);
  }
  return total / (2.0 * static_cast<double>(l));
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double generative(const Matrix& w, const Matrix& h1, const Matrix& h2,
                         const std::vector<cg3::graph::Edge>& pos,
                         const std::vector<cg3::graph::Edge>& neg) {
  const std::size_t c = h1.cols();
  auto score = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += h1(i, k) * w(k, 0) + h2(j, k) * w(c + k, 0);
    return s;
  };
  double total = 0.0;
  for (auto [i, j] : pos) total -= std::log(logistic(score(i, j)));
  for (auto [i, j] : neg) total -= std::log(1.0 - logistic(score(i, j)));
  return total / static_cast<double>(pos.size() + neg.size());
}

inline double cross_entropy(const Matrix& o, const Matrix& y, const std::vector<std::size_t>& labeled) {
  double total = 0.0;
  for (std::size_t i : labeled) {
    double z = 0.0;
    for (double v : o.row(i)) z += std::exp(v);
    for (std::size_t j = 0; j < o.cols(); ++j) total -= y(i, j) * std::log(std::exp(o(i, j)) / z);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Dense encoders

inline Matrix dense_mul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline Matrix dense_relu(Matrix m) {
  for (double& v : m.values()) v = std::max(v, 0.0);
  return m;
}

inline Matrix dense_adjacency(std::size_t n, const std::vector<cg3::graph::Edge>& edges) {
  Matrix a(n, n);
  for (auto [i, j] : edges) {
    if (i == j) continue;
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

// D~^-1/2 (A + I) D~^-1/2
inline Matrix dense_normalize(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix t = a;
  for (std::size_t i = 0; i < n; ++i) t(i, i) += 1.0;
  std::vector<double> d(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i] += t(i, j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t(i, j) /= std::sqrt(d[i] * d[j]);
  return t;
}

inline Matrix dense_gcn(const Matrix& a_hat, const Matrix& x, const Matrix& w0, const Matrix& w1) {
  return dense_mul(a_hat, dense_mul(dense_relu(dense_mul(a_hat, dense_mul(x, w0))), w1));
}

inline Matrix hconcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, a.cols() + j) = b(i, j);
  }
  return out;
}

// Dense assignment matrix S (n x m) from a hyper-node id per fine node.
inline Matrix assignment(const std::vector<std::size_t>& hyper, std::size_t m) {
  Matrix s(hyper.size(), m);
  for (std::size_t i = 0; i < hyper.size(); ++i) s(i, hyper[i]) = 1.0;
  return s;
}

// Mean pooling: diag(1 / column sums of S) S^T.
inline Matrix mean_pool(const Matrix& s) {
  Matrix p(s.cols(), s.rows());
  for (std::size_t c = 0; c < s.cols(); ++c) {
    double count = 0.0;
    for (std::size_t i = 0; i < s.rows(); ++i) count += s(i, c);
    for (std::size_t i = 0; i < s.rows(); ++i) p(c, i) = s(i, c) / count;
  }
  return p;
}

// Coarse adjacency: S^T (A + I) S with the diagonal dropped and entries binarized.
inline Matrix coarse_adjacency(const Matrix& a, const Matrix& s) {
  Matrix t = a;
  for (std::size_t i = 0; i < a.rows(); ++i) t(i, i) += 1.0;
  Matrix c = dense_mul(cg3::transpose(s), dense_mul(t, s));
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) = (i != j && c(i, j) != 0.0) ? 1.0 : 0.0;
  return c;
}

// One-level hierarchical pipeline, written out straight-line.
inline Matrix dense_hier_one_level(const Matrix& a, const Matrix& s, const Matrix& x, const Matrix& w_down,
                                   const Matrix& w_bottom, const Matrix& w_up, const Matrix& w_out) {
  const Matrix a0 = dense_normalize(a);
  const Matrix a1 = dense_normalize(coarse_adjacency(a, s));
  const Matrix h0 = dense_relu(dense_mul(a0, dense_mul(x, w_down)));
  const Matrix pooled = dense_mul(mean_pool(s), h0);
  const Matrix bottom = dense_relu(dense_mul(a1, dense_mul(pooled, w_bottom)));
  const Matrix up = dense_relu(dense_mul(a0, dense_mul(hconcat(dense_mul(s, bottom), h0), w_up)));
  return dense_mul(a0, dense_mul(up, w_out));
}

// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
inline double spectral_radius(const Matrix& m, int iters = 500) {
  std::vector<double> v(m.rows(), 1.0), next(m.rows());
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    double norm = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * v[j];
      next[i] = s;
      norm += s * s;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) v[i] = next[i] / norm;
    lambda = norm;
  }
  return lambda;
}

}  // namespace oracle
