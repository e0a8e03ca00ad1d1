#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cg3/autodiff.hpp"
#include "cg3/coarsen.hpp"
#include "cg3/encoders.hpp"
#include "cg3/graph.hpp"
#include "cg3/losses.hpp"
#include "cg3/optimizer.hpp"

namespace cg3::train {

enum class Mode { full, no_contrastive, no_generative, gcn_baseline };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::no_contrastive: return "no-contrastive";
    case Mode::no_generative: return "no-generative";
    case Mode::gcn_baseline: return "gcn-baseline";
  }
  return "?";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  for (Mode m : {Mode::full, Mode::no_contrastive, Mode::no_generative, Mode::gcn_baseline})
    if (s == to_string(m)) return m;
  return std::nullopt;
}

/// Every knob of a training run. Echoed verbatim into each report.
struct TrainConfig {
  std::size_t max_iters = 500;
  loss::LossWeights weights;
  std::size_t hidden = 128;
  std::size_t levels = 2;
  double dropout = 0.5;
  AdamConfig adam;
  std::size_t patience = 100;
  std::uint64_t seed = 0;
  Mode mode = Mode::full;
  bool exact_contrast = true;
  std::size_t contrast_negatives = 512;
  double neg_ratio = 1.0;
  bool normalize_rows = false;

  // Loss weights after the mode's ablation is applied.
  loss::LossWeights effective_weights() const {
    loss::LossWeights w = weights;
    if (mode == Mode::no_contrastive || mode == Mode::gcn_baseline) w.lambda_ssc = 0.0;
    if (mode == Mode::no_generative || mode == Mode::gcn_baseline) w.lambda_g2 = 0.0;
    return w;
  }

  void validate() const {
    if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
    if (patience < 1) throw ValidationError("patience must be >= 1");
    if (hidden < 1) throw ValidationError("hidden width must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0,1)");
    if (!(neg_ratio >= 0.0)) throw ValidationError("negative ratio must be non-negative");
    if (contrast_negatives < 1) throw ValidationError("contrast negatives must be >= 1");
    weights.validate();
    adam.validate();
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double ce = 0, uc = 0, sc = 0, g2 = 0, total = 0;
  double val_acc = 0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainReport {
  TrainConfig config;
  std::vector<EpochMetrics> epochs;
  double best_val_acc = 0;
  std::size_t best_epoch = 0;
  double test_acc = 0;
  std::size_t coarsening_depth = 0;
  double wall_seconds = 0;
};

/// Both encoders, the generative head and the fusion weight over one graph.
class Model {
 public:
  Model(const graph::GraphDataset& ds, const TrainConfig& cfg)
      : Model(ds, cfg, graph::normalize_adjacency(ds.adjacency)) {}

  std::vector<Parameter*> parameters() {
    auto p = gcn.parameters();
    for (Parameter* q : hier.parameters()) p.push_back(q);
    p.push_back(&head.w);
    return p;
  }

  struct Outputs {
    Matrix local;
    Matrix global;
    Matrix fused;
  };

  Outputs infer(const Matrix& x) const {
    Tape t;
    const auto v = enc::encode_views(gcn, hier, t, t.constant(x));
    const Var o = loss::fuse_outputs(v, weights);
    return {v.local.value(), v.global.value(), o.value()};
  }

  std::vector<Matrix> snapshot() {
    std::vector<Matrix> s;
    for (Parameter* p : parameters()) s.push_back(p->value);
    return s;
  }

  void restore(const std::vector<Matrix>& s) {
    auto ps = parameters();
    if (s.size() != ps.size()) throw UsageError("snapshot does not match model parameters");
    for (std::size_t k = 0; k < ps.size(); ++k) ps[k]->value = s[k];
  }

  enc::GcnEncoder gcn;
  enc::HierEncoder hier;
  loss::GenerativeHead head;
  loss::LossWeights weights;

 private:
  Model(const graph::GraphDataset& ds, const TrainConfig& cfg, graph::NormalizedAdjacency adj)
      : gcn(adj, ds.num_features(), cfg.hidden, ds.num_classes, cfg.seed, cfg.dropout),
        hier(adj, enc::build_coarsening(ds.adjacency, cfg.levels), ds.num_features(), cfg.hidden,
             ds.num_classes, cfg.seed, cfg.dropout),
        head(ds.num_classes),
        weights(cfg.effective_weights()) {}
};

/// Argmax of each row of softmax(o); ties go to the lower class index.
inline std::vector<int> predict_from_output(const Matrix& o) {
  std::vector<int> pred(o.rows(), 0);
  std::vector<double> p(o.cols());
  for (std::size_t i = 0; i < o.rows(); ++i) {
    if (o.cols() == 0) continue;
    const auto row = o.row(i);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += (p[j] = std::exp(row[j] - m));
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (p[j] / s > p[best] / s) best = j;
    pred[i] = static_cast<int>(best);
  }
  return pred;
}

inline std::vector<int> predict(const Model& model, const graph::GraphDataset& ds) {
  return predict_from_output(model.infer(ds.features).fused);
}

inline double evaluate(std::span<const int> predictions, const graph::GraphDataset& ds,
                       graph::Split split) {
  const auto& idx = ds.split(split);
  if (idx.empty())
    throw ValidationError(std::string("cannot evaluate on empty ") + graph::split_name(split) +
                          " split");
  if (predictions.size() != ds.num_nodes())
    throw DimensionError("prediction count " + std::to_string(predictions.size()) +
                         " != node count " + std::to_string(ds.num_nodes()));
  std::size_t correct = 0;
  for (std::size_t i : idx)
    if (predictions[i] == ds.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

namespace detail {

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch);
}

inline void require_finite(double v, std::size_t epoch, const char* component) {
  if (!std::isfinite(v))
    throw TrainingError("epoch " + std::to_string(epoch) + ": " + component +
                        " loss is not finite");
}

}  // namespace detail

/// Full-batch training of an already-built model. On return the model holds the
/// parameters from the epoch with the best validation accuracy.
inline TrainReport fit(Model& model, const graph::GraphDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.train.empty()) throw ValidationError("training needs at least one labeled node");
  const auto started = std::chrono::steady_clock::now();

  TrainReport report;
  report.config = cfg;
  report.coarsening_depth = model.hier.depth();

  const loss::LossWeights lw = cfg.effective_weights();
  model.weights = lw;
  Adam adam(cfg.adam);
  const auto params = model.parameters();
  const auto x = std::make_shared<const Matrix>(ds.features);
  const Matrix y = ds.one_hot();

  loss::ContrastOptions copt;
  copt.normalize_rows = cfg.normalize_rows;
  copt.exact = cfg.exact_contrast;
  copt.negatives = cfg.contrast_negatives;

  double best_val = -1.0;
  std::size_t since_best = 0;
  std::vector<Matrix> best_params = model.snapshot();

  for (std::size_t epoch = 1; epoch <= cfg.max_iters; ++epoch) {
    Tape tape;
    const Var xv = tape.constant(x);
    const auto views = enc::encode_views(model.gcn, model.hier, tape, xv, true);
    const Var ce = loss::cross_entropy_loss(loss::fuse_outputs(views, lw), y, ds.train);

    // Ablated terms are still evaluated on detached views so every mode logs them.
    const loss::ViewEmbeddings frozen{detach(views.local), detach(views.global)};
    copt.seed = detail::epoch_seed(cfg.seed, epoch);
    const auto ssc = loss::ssc_loss(lw.lambda_ssc > 0.0 ? views : frozen, ds.labels, ds.train, copt);
    const auto batch =
        loss::sample_edges(ds.adjacency, cfg.neg_ratio, detail::epoch_seed(cfg.seed, epoch));
    const Var head_w = lw.lambda_g2 > 0.0 ? tape.param(model.head.w) : tape.constant(model.head.w.value);
    const Var g2 = loss::generative_loss(head_w, lw.lambda_g2 > 0.0 ? views : frozen, batch);
    const Var total = loss::overall_loss(ce, ssc.total, g2, lw);

    EpochMetrics m;
    m.epoch = epoch;
    m.ce = ce.value()(0, 0);
    m.uc = ssc.uc.value()(0, 0);
    m.sc = ssc.sc.value()(0, 0);
    m.g2 = g2.value()(0, 0);
    m.total = total.value()(0, 0);
    detail::require_finite(m.ce, epoch, "cross-entropy");
    detail::require_finite(m.uc, epoch, "unsupervised contrastive");
    detail::require_finite(m.sc, epoch, "supervised contrastive");
    detail::require_finite(m.g2, epoch, "generative");
    detail::require_finite(m.total, epoch, "total");

    tape.backward(total);
    try {
      adam.step(params);
    } catch (const TrainingError& e) {
      throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
    }

    const auto pred = predict(model, ds);
    m.val_acc = ds.val.empty() ? 0.0 : evaluate(pred, ds, graph::Split::val);
    report.epochs.push_back(m);

    if (ds.val.empty() || m.val_acc > best_val) {
      best_val = m.val_acc;
      report.best_epoch = epoch;
      best_params = model.snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  model.restore(best_params);
  report.best_val_acc = std::max(best_val, 0.0);
  if (!ds.test.empty()) report.test_acc = evaluate(predict(model, ds), ds, graph::Split::test);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

struct TrainResult {
  Model model;
  TrainReport report;
};

inline TrainResult train(const graph::GraphDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  Model model(ds, cfg);
  TrainReport report = fit(model, ds, cfg);
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Multi-run helpers

/// Worker cap from CG3_THREADS, else the hardware concurrency (at least 1).
inline std::size_t worker_limit() {
  if (const char* env = std::getenv("CG3_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(0..count-1) over up to `threads` workers. The first exception is rethrown.
inline void parallel_for(std::size_t count, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// One training run per seed (cfg.seed, cfg.seed + 1, ...), results in seed order.
inline std::vector<TrainResult> train_seeds(const graph::GraphDataset& ds, const TrainConfig& cfg,
                                            std::size_t seeds, std::size_t threads = worker_limit()) {
  std::vector<std::optional<TrainResult>> slots(seeds);
  parallel_for(seeds, threads, [&](std::size_t k) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + k;
    slots[k].emplace(train(ds, c));
  });
  std::vector<TrainResult> out;
  out.reserve(seeds);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct Summary {
  double mean = 0;
  double stddev = 0;  // population standard deviation
};

inline Summary summarize(std::span<const double> xs) {
  Summary s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(xs.size()));
  return s;
}

struct GridEntry {
  loss::LossWeights weights;
  double mean_val_acc = 0;
};

struct GridResult {
  loss::LossWeights best;
  std::vector<GridEntry> entries;
};

/// Searches lambda_phi1 x lambda_ssc x lambda_g2 over a fixed grid, ranking by mean
/// best-validation accuracy across `seeds` runs. Earlier grid points win ties.
inline GridResult grid_search(const graph::GraphDataset& ds, const TrainConfig& cfg,
                              std::size_t seeds = 1, std::size_t threads = worker_limit()) {
  GridResult out;
  for (double phi : {0.25, 0.5, 0.75})
    for (double ssc : {0.5, 1.0})
      for (double g2 : {0.5, 1.0}) out.entries.push_back({{phi, ssc, g2}, 0.0});

  const std::size_t runs = out.entries.size() * seeds;
  std::vector<double> val(runs, 0.0);
  parallel_for(runs, threads, [&](std::size_t r) {
    TrainConfig c = cfg;
    c.weights = out.entries[r / seeds].weights;
    c.seed = cfg.seed + r % seeds;
    Model model(ds, c);
    val[r] = fit(model, ds, c).best_val_acc;
  });
  double best = -1.0;
  for (std::size_t e = 0; e < out.entries.size(); ++e) {
    double s = 0.0;
    for (std::size_t k = 0; k < seeds; ++k) s += val[e * seeds + k];
    out.entries[e].mean_val_acc = s / static_cast<double>(seeds);
    if (out.entries[e].mean_val_acc > best) {
      best = out.entries[e].mean_val_acc;
      out.best = out.entries[e].weights;
    }
  }
  return out;
}

/// Accuracy of always predicting the most frequent training class on `split`.
inline double majority_class_accuracy(const graph::GraphDataset& ds, graph::Split split) {
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (std::size_t i : ds.train) ++counts[static_cast<std::size_t>(ds.labels[i])];
  const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  return evaluate(std::vector<int>(ds.num_nodes(), majority), ds, split);
}

}  // namespace cg3::train
