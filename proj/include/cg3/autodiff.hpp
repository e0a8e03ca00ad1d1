#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cg3/errors.hpp"
#include "cg3/matrix.hpp"

namespace cg3 {

/// A trainable matrix that outlives any single tape. `grad` accumulates across
/// backward passes until the optimizer consumes and zeroes it.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Matrix v, bool weight_decay = false)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), decay(weight_decay) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
    grad.fill(0.0);
  }

  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = false;  // L2 weight decay applies to this parameter
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Gradient from the most recent backward pass; empty if the node was unreached.
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are stored in creation order, so every parent has a
/// smaller id than its children and a single descending sweep is a reverse
/// topological traversal.
class Tape {
 public:
  // Receives the node's own gradient and pushes contributions into its parents.
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v) {
    Node n;
    n.own = std::move(v);
    return push(std::move(n));
  }

  // Shares an immutable matrix without copying it.
  Var constant(std::shared_ptr<const Matrix> v) {
    Node n;
    n.shared = std::move(v);
    return push(std::move(n));
  }

  Var param(Parameter& p) {
    Node n;
    n.shared = std::shared_ptr<const Matrix>(std::shared_ptr<const Matrix>{}, &p.value);
    n.requires_grad = true;
    n.param = &p;
    return push(std::move(n));
  }

  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(parents), std::move(fn));
  }

  Var record(Matrix value, std::vector<Var> parents, BackwardFn fn) {
    Node n;
    n.own = std::move(value);
    for (const Var& p : parents) {
      check_owner(p);
      n.parents.push_back(p.id_);
      n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Matrix& value(const Var& v) const {
    check_owner(v);
    return nodes_[v.id_].value();
  }
  const Matrix& grad(const Var& v) const {
    check_owner(v);
    return nodes_[v.id_].grad;
  }
  bool requires_grad(const Var& v) const {
    check_owner(v);
    return nodes_[v.id_].requires_grad;
  }
  std::span<const std::size_t> parents(const Var& v) const { return nodes_[v.id_].parents; }

  // Gradient buffer for in-place accumulation, zero-initialized on first use.
  Matrix& grad_buffer(const Var& v) {
    Node& n = nodes_[v.id_];
    if (n.grad.empty() && !n.value().empty()) n.grad = Matrix(n.value().rows(), n.value().cols());
    return n.grad;
  }

  void accumulate(const Var& v, const Matrix& g) {
    if (!requires_grad(v)) return;
    grad_buffer(v) += g;
  }

  /// Propagates d(loss)/d(node) to every reachable node and adds the result into
  /// the grads of the Parameters behind `param` leaves.
  void backward(const Var& loss) {
    check_owner(loss);
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw UsageError("backward requires a 1x1 loss, got " + lv.shape());
    for (std::size_t i = 0; i <= loss.id_; ++i) nodes_[i].grad = Matrix();
    grad_buffer(loss).fill(1.0);
    ++backward_passes_;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      ++n.visits;
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.param != nullptr) {
        if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
        n.param->grad += n.grad;
      }
      if (n.backward) n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  // Number of times node `v` was swept by backward(); used to check the single-visit contract.
  std::size_t visits(const Var& v) const { return nodes_[v.id_].visits; }
  std::size_t backward_passes() const noexcept { return backward_passes_; }

 private:
  struct Node {
    Matrix own;
    std::shared_ptr<const Matrix> shared;
    Matrix grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    std::size_t visits = 0;

    const Matrix& value() const { return shared ? *shared : own; }
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  void check_owner(const Var& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size())
      throw UsageError("Var does not belong to this tape");
  }

  std::deque<Node> nodes_;
  std::size_t backward_passes_ = 0;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }
inline const Matrix& Var::grad() const { return tape_->grad(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

namespace detail {

inline Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw UsageError("operation on a default-constructed Var");
  return *a.tape();
}

inline Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw UsageError("operands recorded on different tapes");
  return tape_of(a);
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError(std::string(op) + ": shape " + a.value().shape() + " vs " +
                         b.value().shape());
}

inline double log_sigmoid(double x) {
  // log(1 / (1 + e^-x)) without overflow for either sign
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + a.value().shape() + " x " + b.value().shape());
  return t.record(kernels::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.grad_buffer(a) += kernels::matmul_nt(g, b.value());
    if (tp.requires_grad(b)) tp.grad_buffer(b) += kernels::matmul_tn(a.value(), g);
  });
}

// s is a constant: only `b` receives a gradient.
inline Var spmm(std::shared_ptr<const SparseMatrix> s, const Var& b) {
  Tape& t = detail::tape_of(b);
  if (!s) throw UsageError("spmm: null sparse matrix");
  if (s->cols() != b.rows()) throw DimensionError("spmm: " + s->shape() + " x " + b.value().shape());
  Matrix v = s->multiply(b.value());
  return t.record(std::move(v), {b}, [s, b](Tape& tp, const Matrix& g) {
    tp.grad_buffer(b) += s->multiply_transposed(g);
  });
}

inline Var transpose(const Var& a) {
  Tape& t = detail::tape_of(a);
  return t.record(transpose(a.value()), {a}, [a](Tape& tp, const Matrix& g) {
    tp.grad_buffer(a) += transpose(g);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "add");
  Matrix v = a.value();
  v += b.value();
  return t.record(std::move(v), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "sub");
  Matrix v = a.value();
  v.add_scaled(b.value(), -1.0);
  return t.record(std::move(v), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(b)) tp.grad_buffer(b).add_scaled(g, -1.0);
  });
}

inline Var scale(const Var& a, double alpha) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  for (double& x : v.values()) x *= alpha;
  return t.record(std::move(v), {a}, [a, alpha](Tape& tp, const Matrix& g) {
    tp.grad_buffer(a).add_scaled(g, alpha);
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "hadamard");
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.values()[k] *= b.value().values()[k];
  return t.record(std::move(v), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    for (auto [x, y] : {std::pair{a, b}, std::pair{b, a}}) {
      if (!tp.requires_grad(x)) continue;
      auto gx = tp.grad_buffer(x).values();
      auto yv = y.value().values();
      for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g.values()[k] * yv[k];
    }
  });
}

// Elementwise product with a constant matrix (dropout masks, label indicators).
inline Var mul_const(const Var& a, Matrix c) {
  Tape& t = detail::tape_of(a);
  if (!a.value().same_shape(c))
    throw DimensionError("mul_const: shape " + a.value().shape() + " vs " + c.shape());
  Matrix v = a.value();
  for (std::size_t k = 0; k < v.size(); ++k) v.values()[k] *= c.values()[k];
  return t.record(std::move(v), {a}, [a, c = std::move(c)](Tape& tp, const Matrix& g) {
    auto ga = tp.grad_buffer(a).values();
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g.values()[k] * c.values()[k];
  });
}

inline Var relu(const Var& a) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  for (double& x : v.values()) x = x > 0.0 ? x : 0.0;
  return t.record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
    auto ga = tp.grad_buffer(a).values();
    auto x = a.value().values();
    for (std::size_t k = 0; k < ga.size(); ++k)
      if (x[k] > 0.0) ga[k] += g.values()[k];
  });
}

inline Var sigmoid(const Var& a) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  for (double& x : v.values()) x = detail::sigmoid(x);
  Matrix y = v;
  return t.record(std::move(v), {a}, [a, y = std::move(y)](Tape& tp, const Matrix& g) {
    auto ga = tp.grad_buffer(a).values();
    for (std::size_t k = 0; k < ga.size(); ++k) {
      const double s = y.values()[k];
      ga[k] += g.values()[k] * s * (1.0 - s);
    }
  });
}

inline Var exp(const Var& a) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  for (double& x : v.values()) x = std::exp(x);
  Matrix y = v;
  return t.record(std::move(v), {a}, [a, y = std::move(y)](Tape& tp, const Matrix& g) {
    auto ga = tp.grad_buffer(a).values();
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g.values()[k] * y.values()[k];
  });
}

inline Var log(const Var& a) {
  Tape& t = detail::tape_of(a);
  const Matrix& x = a.value();
  Matrix v(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (!(x(i, j) > 0.0))
        throw DomainError("log of non-positive entry (" + std::to_string(i) + "," +
                          std::to_string(j) + ") = " + std::to_string(x(i, j)));
      v(i, j) = std::log(x(i, j));
    }
  return t.record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
    auto ga = tp.grad_buffer(a).values();
    auto xv = a.value().values();
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g.values()[k] / xv[k];
  });
}

// ---------------------------------------------------------------------------
// Row-wise reductions. All softmax-style ops subtract the row maximum first.

namespace detail {

// Per-row log-sum-exp over entries where mask != 0 (all entries when mask is null).
inline Matrix row_lse(const Matrix& x, const Matrix* mask) {
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    bool any = false, nan = false;
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (mask == nullptr || (*mask)(i, j) != 0.0) {
        any = true;
        nan = nan || std::isnan(x(i, j));
        m = std::max(m, x(i, j));
      }
    if (!any) throw DomainError("log-sum-exp over an empty row " + std::to_string(i));
    if (nan || !std::isfinite(m)) {
      out(i, 0) = nan ? std::numeric_limits<double>::quiet_NaN() : m;
      continue;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (mask == nullptr || (*mask)(i, j) != 0.0) s += std::exp(x(i, j) - m);
    out(i, 0) = m + std::log(s);
  }
  return out;
}

}  // namespace detail

// n x m -> n x 1 with entry i = log sum_j exp(a_ij)
inline Var row_logsumexp(const Var& a) {
  Tape& t = detail::tape_of(a);
  Matrix v = detail::row_lse(a.value(), nullptr);
  Matrix lse = v;
  return t.record(std::move(v), {a}, [a, lse = std::move(lse)](Tape& tp, const Matrix& g) {
    Matrix& ga = tp.grad_buffer(a);
    const Matrix& x = a.value();
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) ga(i, j) += g(i, 0) * std::exp(x(i, j) - lse(i, 0));
  });
}

// Log-sum-exp restricted to entries with mask != 0. Every row needs at least one.
inline Var masked_row_logsumexp(const Var& a, Matrix mask) {
  Tape& t = detail::tape_of(a);
  if (!mask.same_shape(a.value()))
    throw DimensionError("masked_row_logsumexp: mask " + mask.shape() + " vs " + a.value().shape());
  Matrix v = detail::row_lse(a.value(), &mask);
  Matrix lse = v;
  return t.record(std::move(v), {a},
                  [a, lse = std::move(lse), mask = std::move(mask)](Tape& tp, const Matrix& g) {
                    Matrix& ga = tp.grad_buffer(a);
                    const Matrix& x = a.value();
                    for (std::size_t i = 0; i < x.rows(); ++i)
                      for (std::size_t j = 0; j < x.cols(); ++j)
                        if (mask(i, j) != 0.0) ga(i, j) += g(i, 0) * std::exp(x(i, j) - lse(i, 0));
                  });
}

inline Var row_softmax(const Var& a) {
  Tape& t = detail::tape_of(a);
  const Matrix& x = a.value();
  Matrix lse = detail::row_lse(x, nullptr);
  Matrix p(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) p(i, j) = std::exp(x(i, j) - lse(i, 0));
  Matrix y = p;
  return t.record(std::move(p), {a}, [a, y = std::move(y)](Tape& tp, const Matrix& g) {
    Matrix& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

// log(row_softmax(a)) computed as a - lse(a).
inline Var row_log_softmax(const Var& a) {
  Tape& t = detail::tape_of(a);
  const Matrix& x = a.value();
  Matrix lse = detail::row_lse(x, nullptr);
  Matrix v(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) v(i, j) = x(i, j) - lse(i, 0);
  Matrix y = v;
  return t.record(std::move(v), {a}, [a, y = std::move(y)](Tape& tp, const Matrix& g) {
    Matrix& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) gsum += g(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += g(i, j) - std::exp(y(i, j)) * gsum;
    }
  });
}

// Divides each row by its l2 norm (norm floored at 1e-12).
inline Var l2_normalize_rows(const Var& a) {
  Tape& t = detail::tape_of(a);
  const Matrix& x = a.value();
  Matrix norms(x.rows(), 1);
  Matrix v = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double e : x.row(i)) s += e * e;
    norms(i, 0) = std::max(std::sqrt(s), 1e-12);
    for (double& e : v.row(i)) e /= norms(i, 0);
  }
  Matrix y = v;
  return t.record(std::move(v), {a},
                  [a, y = std::move(y), norms = std::move(norms)](Tape& tp, const Matrix& g) {
                    Matrix& ga = tp.grad_buffer(a);
                    for (std::size_t i = 0; i < y.rows(); ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < y.cols(); ++j) dot += y(i, j) * g(i, j);
                      for (std::size_t j = 0; j < y.cols(); ++j)
                        ga(i, j) += (g(i, j) - y(i, j) * dot) / norms(i, 0);
                    }
                  });
}

// n x c, n x c -> n x 1 with entry i = <a_i, b_i>
inline Var row_inner_products(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_same_shape(a, b, "row_inner_products");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  Matrix v(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += x(i, j) * y(i, j);
    v(i, 0) = s;
  }
  return t.record(std::move(v), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    for (auto [dst, other] : {std::pair{a, b}, std::pair{b, a}}) {
      if (!tp.requires_grad(dst)) continue;
      Matrix& gd = tp.grad_buffer(dst);
      const Matrix& o = other.value();
      for (std::size_t i = 0; i < o.rows(); ++i)
        for (std::size_t j = 0; j < o.cols(); ++j) gd(i, j) += g(i, 0) * o(i, j);
    }
  });
}

/// Scores against gathered partners: out(i, t) = <a_i, b_{partners(i, t)}>.
/// `partners` is a row-major table of row indices into b, `per_row` per row of a.
inline Var gathered_inner_products(const Var& a, const Var& b, std::vector<std::size_t> partners,
                                   std::size_t per_row) {
  Tape& t = detail::tape_of(a, b);
  if (a.cols() != b.cols())
    throw DimensionError("gathered_inner_products: " + a.value().shape() + " vs " + b.value().shape());
  if (partners.size() != a.rows() * per_row)
    throw DimensionError("gathered_inner_products: partner table size mismatch");
  for (std::size_t j : partners)
    if (j >= b.rows()) throw DimensionError("gathered_inner_products: partner index out of range");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  Matrix v(x.rows(), per_row);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t s = 0; s < per_row; ++s) {
      const auto yr = y.row(partners[i * per_row + s]);
      double acc = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x(i, k) * yr[k];
      v(i, s) = acc;
    }
  return t.record(std::move(v), {a, b},
                  [a, b, partners = std::move(partners), per_row](Tape& tp, const Matrix& g) {
                    const Matrix& x = a.value();
                    const Matrix& y = b.value();
                    const bool ga_on = tp.requires_grad(a);
                    const bool gb_on = tp.requires_grad(b);
                    for (std::size_t i = 0; i < x.rows(); ++i)
                      for (std::size_t s = 0; s < per_row; ++s) {
                        const std::size_t j = partners[i * per_row + s];
                        const double w = g(i, s);
                        if (ga_on) {
                          auto dst = tp.grad_buffer(a).row(i);
                          for (std::size_t k = 0; k < x.cols(); ++k) dst[k] += w * y(j, k);
                        }
                        if (gb_on) {
                          auto dst = tp.grad_buffer(b).row(j);
                          for (std::size_t k = 0; k < x.cols(); ++k) dst[k] += w * x(i, k);
                        }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Structural

inline Var reduce_sum(const Var& a) {
  Tape& t = detail::tape_of(a);
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return t.record(Matrix(1, 1, s), {a}, [a](Tape& tp, const Matrix& g) {
    for (double& x : tp.grad_buffer(a).values()) x += g(0, 0);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_cols of nothing");
  Tape& t = detail::tape_of(parts.front());
  const std::size_t n = parts.front().rows();
  std::size_t width = 0;
  for (const Var& p : parts) {
    detail::tape_of(parts.front(), p);
    if (p.rows() != n)
      throw DimensionError("concat_cols: row count " + std::to_string(p.rows()) + " vs " +
                           std::to_string(n));
    width += p.cols();
  }
  Matrix v(n, width);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& m = p.value();
    for (std::size_t i = 0; i < n; ++i)
      std::copy(m.row(i).begin(), m.row(i).end(), v.row(i).begin() + static_cast<std::ptrdiff_t>(off));
    off += m.cols();
  }
  return t.record(std::move(v), parts, [parts](Tape& tp, const Matrix& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t w = p.cols();
      if (tp.requires_grad(p)) {
        Matrix& gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < gp.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) += g(i, off + j);
      }
      off += w;
    }
  });
}

// Rows of `a` selected by `idx` (repeats allowed).
inline Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
  Tape& t = detail::tape_of(a);
  const Matrix& x = a.value();
  Matrix v(idx.size(), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.rows())
      throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " >= " +
                           std::to_string(x.rows()));
    std::copy(x.row(idx[r]).begin(), x.row(idx[r]).end(), v.row(r).begin());
  }
  return t.record(std::move(v), {a}, [a, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix& ga = tp.grad_buffer(a);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto dst = ga.row(idx[r]);
      auto src = g.row(r);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  });
}

// Copy of a's value as a new constant; blocks gradient flow.
inline Var detach(const Var& a) { return detail::tape_of(a).constant(a.value()); }

/// Per-entry binary negative log-likelihood of logits z (m x 1) against 0/1 targets.
/// Probabilities are clamped at `floor` before the log; clamped entries pass no gradient.
inline Var logistic_nll(const Var& z, std::vector<double> targets, double floor = 1e-12) {
  Tape& t = detail::tape_of(z);
  const Matrix& x = z.value();
  if (x.cols() != 1 || x.rows() != targets.size())
    throw DimensionError("logistic_nll: logits " + x.shape() + " vs " +
                         std::to_string(targets.size()) + " targets");
  const double log_floor = std::log(floor);
  Matrix v(x.rows(), 1);
  std::vector<char> clamped(x.rows(), 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double lp = targets[i] != 0.0 ? detail::log_sigmoid(x(i, 0)) : detail::log_sigmoid(-x(i, 0));
    if (lp < log_floor) clamped[i] = 1;
    v(i, 0) = -std::max(lp, log_floor);
  }
  return t.record(std::move(v), {z},
                  [z, targets = std::move(targets), clamped = std::move(clamped)](Tape& tp,
                                                                                   const Matrix& g) {
                    Matrix& gz = tp.grad_buffer(z);
                    const Matrix& x = z.value();
                    for (std::size_t i = 0; i < x.rows(); ++i)
                      if (!clamped[i]) gz(i, 0) += g(i, 0) * (detail::sigmoid(x(i, 0)) - targets[i]);
                  });
}

/// Inverted dropout: zeroes entries with probability `rate`, rescales survivors.
inline Var dropout(const Var& a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw UsageError("dropout rate must be < 1");
  const double keep = 1.0 - rate;
  Matrix mask(a.rows(), a.cols());
  for (double& m : mask.values()) m = unit_uniform(rng) < keep ? 1.0 / keep : 0.0;
  return mul_const(a, std::move(mask));
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double alpha, const Var& a) { return scale(a, alpha); }

}  // namespace cg3
