#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "json.hpp"

#include "cg3/errors.hpp"
#include "cg3/trainer.hpp"

namespace cg3::report {

using nlohmann::json;

inline json to_json(const train::TrainConfig& c) {
  return json{{"max_iters", c.max_iters},
              {"lambda_phi1", c.weights.lambda_phi1},
              {"lambda_ssc", c.weights.lambda_ssc},
              {"lambda_g2", c.weights.lambda_g2},
              {"hidden", c.hidden},
              {"levels", c.levels},
              {"dropout", c.dropout},
              {"lr", c.adam.lr},
              {"beta1", c.adam.beta1},
              {"beta2", c.adam.beta2},
              {"epsilon", c.adam.epsilon},
              {"weight_decay", c.adam.weight_decay},
              {"patience", c.patience},
              {"seed", c.seed},
              {"mode", train::to_string(c.mode)},
              {"exact_contrast", c.exact_contrast},
              {"contrast_negatives", c.contrast_negatives},
              {"neg_ratio", c.neg_ratio},
              {"normalize_rows", c.normalize_rows}};
}

inline json to_json(const train::EpochMetrics& m) {
  return json{{"epoch", m.epoch}, {"ce", m.ce},       {"uc", m.uc},
              {"sc", m.sc},       {"g2", m.g2},       {"total", m.total},
              {"val_acc", m.val_acc}};
}

// Everything except the config echo. `wall_seconds` is the only timing field.
inline json run_json(const train::TrainReport& r) {
  json epochs = json::array();
  for (const auto& m : r.epochs) epochs.push_back(to_json(m));
  return json{{"seed", r.config.seed},
              {"best_val_acc", r.best_val_acc},
              {"best_epoch", r.best_epoch},
              {"test_acc", r.test_acc},
              {"epochs_run", r.epochs.size()},
              {"coarsening_depth", r.coarsening_depth},
              {"wall_seconds", r.wall_seconds},
              {"epochs", std::move(epochs)}};
}

inline json to_json(const train::TrainReport& r) {
  json j = run_json(r);
  j["config"] = to_json(r.config);
  return j;
}

// One JSON object per line, each tagged with the run's seed.
inline std::string metrics_jsonl(const train::TrainReport& r) {
  std::string out;
  for (const auto& m : r.epochs) {
    json j = to_json(m);
    j["seed"] = r.config.seed;
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// Removes timing fields so two reports can be compared for determinism.
inline json strip_timing(json j) {
  if (j.is_object()) {
    j.erase("wall_seconds");
    j.erase("timestamp");
    for (auto& [k, v] : j.items()) v = strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = strip_timing(v);
  }
  return j;
}

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      h_ ^= c;
      h_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const noexcept { return h_; }
  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 0; i < 16; ++i) s[15 - i] = digits[(h_ >> (4 * i)) & 0xF];
    return s;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

/// Content hash over the bundle files in their canonical order.
inline std::string bundle_hash(const std::filesystem::path& dir) {
  Fnv1a h;
  for (const char* name : graph::kBundleFiles) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw LoadError("missing bundle file: " + (dir / name).string());
    const std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    h.update(name);
    h.update(std::string_view("\0", 1));
    h.update(content);
  }
  return h.hex();
}

}  // namespace cg3::report
