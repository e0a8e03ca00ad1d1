#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cg3/errors.hpp"
#include "cg3/matrix.hpp"

namespace cg3::graph {

inline constexpr int kUnknownLabel = -1;

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

using Edge = std::pair<std::size_t, std::size_t>;

/// Symmetric 0/1 adjacency from an undirected edge list. Either orientation is
/// accepted, duplicates collapse, self-loops are dropped.
inline SparseMatrix adjacency_from_edges(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(edges.size() * 2);
  for (auto [i, j] : edges) {
    if (i >= n || j >= n)
      throw ValidationError("edge (" + std::to_string(i) + "," + std::to_string(j) +
                            ") references a node >= " + std::to_string(n));
    if (i == j) continue;
    t.push_back({i, j, 1.0});
    t.push_back({j, i, 1.0});
  }
  SparseMatrix summed = SparseMatrix::from_triplets(n, n, std::move(t));
  std::vector<double> ones(summed.nnz(), 1.0);
  return SparseMatrix(n, n, {summed.offsets().begin(), summed.offsets().end()},
                      {summed.indices().begin(), summed.indices().end()}, std::move(ones));
}

struct GraphDataset {
  Matrix features;                 // n x d
  SparseMatrix adjacency;          // n x n, symmetric 0/1, zero diagonal
  std::vector<int> labels;         // class id or kUnknownLabel
  std::vector<std::size_t> train;  // sorted
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::size_t num_classes = 0;

  std::size_t num_nodes() const noexcept { return features.rows(); }
  std::size_t num_features() const noexcept { return features.cols(); }
  std::size_t num_edges() const noexcept { return adjacency.nnz() / 2; }

  const std::vector<std::size_t>& split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      case Split::test: return test;
    }
    return test;
  }

  // Undirected edges with i < j in lexicographic order.
  std::vector<Edge> edge_list() const {
    std::vector<Edge> e;
    e.reserve(num_edges());
    for (std::size_t i = 0; i < adjacency.rows(); ++i)
      for (std::size_t j : adjacency.row_indices(i))
        if (i < j) e.emplace_back(i, j);
    return e;
  }

  // Y_ij = 1 iff node i has known class j.
  Matrix one_hot() const {
    Matrix y(num_nodes(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] != kUnknownLabel) y(i, static_cast<std::size_t>(labels[i])) = 1.0;
    return y;
  }

  void validate() const {
    const std::size_t n = num_nodes();
    if (adjacency.rows() != n || adjacency.cols() != n)
      throw ValidationError("adjacency " + adjacency.shape() + " does not match " +
                            std::to_string(n) + " nodes");
    if (labels.size() != n)
      throw ValidationError("label count " + std::to_string(labels.size()) + " != node count " +
                            std::to_string(n));
    for (std::size_t i = 0; i < n; ++i) {
      const int y = labels[i];
      if (y != kUnknownLabel && (y < 0 || static_cast<std::size_t>(y) >= num_classes))
        throw ValidationError("label " + std::to_string(y) + " of node " + std::to_string(i) +
                              " outside [0," + std::to_string(num_classes) + ")");
      if (adjacency.contains(i, i))
        throw ValidationError("adjacency stores a self-loop at node " + std::to_string(i));
    }
    if (auto bad = adjacency.first_asymmetry())
      throw ValidationError("adjacency not symmetric at (" + std::to_string(bad->first) + "," +
                            std::to_string(bad->second) + ")");
    std::vector<int> owner(n, -1);
    for (Split s : {Split::train, Split::val, Split::test}) {
      for (std::size_t i : split(s)) {
        if (i >= n)
          throw ValidationError(std::string(split_name(s)) + " index " + std::to_string(i) +
                                " out of range");
        if (owner[i] != -1)
          throw ValidationError("node " + std::to_string(i) + " appears in both " +
                                split_name(static_cast<Split>(owner[i])) + " and " + split_name(s));
        owner[i] = static_cast<int>(s);
      }
    }
    for (std::size_t i : train)
      if (labels[i] == kUnknownLabel)
        throw ValidationError("train node " + std::to_string(i) + " has no label");
  }
};

/// D^-1/2 (A + I) D^-1/2 with D_ii = sum_j (A + I)_ij.
struct NormalizedAdjacency {
  std::shared_ptr<const SparseMatrix> matrix;

  std::size_t size() const { return matrix ? matrix->rows() : 0; }
};

inline NormalizedAdjacency normalize_adjacency(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw ValidationError("adjacency must be square, got " + a.shape());
  if (auto bad = a.first_asymmetry())
    throw ValidationError("adjacency not symmetric: entry (" + std::to_string(bad->first) + "," +
                          std::to_string(bad->second) + ") has no matching transpose entry");
  const std::size_t n = a.rows();
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (a.at(i, i) != 0.0)
      throw ValidationError("adjacency has a nonzero diagonal at " + std::to_string(i));
    double d = 1.0;
    for (double v : a.row_values(i)) d += v;
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(a.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) {
    t.push_back({i, i, inv_sqrt_deg[i] * inv_sqrt_deg[i]});
    auto idx = a.row_indices(i);
    auto val = a.row_values(i);
    for (std::size_t p = 0; p < idx.size(); ++p)
      t.push_back({i, idx[p], val[p] * inv_sqrt_deg[i] * inv_sqrt_deg[idx[p]]});
  }
  return {std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(n, n, std::move(t)))};
}

// ---------------------------------------------------------------------------
// Bundle directory format

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    if (s.front() == '+') s.remove_prefix(1);
  }
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("missing bundle file: " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("missing bundle file: " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << content;
  if (!out) throw IoError("write failed for " + p.string());
}

}  // namespace detail

inline constexpr const char* kBundleFiles[] = {"meta.json", "features.csv", "edges.csv",
                                               "labels.csv", "splits.json"};

inline void save_bundle(const GraphDataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create bundle directory " + dir.string() + ": " + ec.message());

  nlohmann::json meta = {{"nodes", ds.num_nodes()},
                         {"features", ds.num_features()},
                         {"classes", ds.num_classes}};
  detail::write_file(dir / "meta.json", meta.dump() + "\n");

  std::string feats;
  for (std::size_t i = 0; i < ds.num_nodes(); ++i) {
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) feats += ',';
      feats += detail::format_double(row[j]);
    }
    feats += '\n';
  }
  detail::write_file(dir / "features.csv", feats);

  std::string edges;
  for (auto [i, j] : ds.edge_list()) edges += std::to_string(i) + "," + std::to_string(j) + "\n";
  detail::write_file(dir / "edges.csv", edges);

  std::string labels;
  for (int y : ds.labels) labels += std::to_string(y) + "\n";
  detail::write_file(dir / "labels.csv", labels);

  nlohmann::json splits = {{"train", ds.train}, {"val", ds.val}, {"test", ds.test}};
  detail::write_file(dir / "splits.json", splits.dump() + "\n");
}

inline GraphDataset load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw LoadError("bundle directory not found: " + dir.string());
  const nlohmann::json meta = detail::read_json(dir / "meta.json");
  std::size_t n = 0, d = 0, c = 0;
  try {
    n = meta.at("nodes").get<std::size_t>();
    d = meta.at("features").get<std::size_t>();
    c = meta.at("classes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("meta.json needs integer nodes/features/classes: " + std::string(e.what()));
  }

  GraphDataset ds;
  ds.num_classes = c;

  const auto feat_lines = detail::read_lines(dir / "features.csv");
  if (feat_lines.size() != n)
    throw LoadError("features.csv has " + std::to_string(feat_lines.size()) + " rows, expected " +
                    std::to_string(n));
  ds.features = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto fields = d == 0 && feat_lines[i].empty() ? std::vector<std::string_view>{}
                                                        : detail::split_commas(feat_lines[i]);
    if (fields.size() != d)
      throw LoadError("features.csv line " + std::to_string(i + 1) + " has " +
                      std::to_string(fields.size()) + " values, expected " + std::to_string(d));
    for (std::size_t j = 0; j < d; ++j)
      if (!detail::parse_number(fields[j], ds.features(i, j)) || !std::isfinite(ds.features(i, j)))
        throw LoadError("features.csv line " + std::to_string(i + 1) + ": bad number '" +
                        std::string(fields[j]) + "'");
  }

  std::vector<Edge> edges;
  const auto edge_lines = detail::read_lines(dir / "edges.csv");
  for (std::size_t k = 0; k < edge_lines.size(); ++k) {
    if (edge_lines[k].empty()) continue;
    const auto f = detail::split_commas(edge_lines[k]);
    std::size_t i = 0, j = 0;
    if (f.size() != 2 || !detail::parse_number(f[0], i) || !detail::parse_number(f[1], j))
      throw LoadError("edges.csv line " + std::to_string(k + 1) + ": expected 'i,j'");
    if (i >= n || j >= n)
      throw LoadError("edges.csv line " + std::to_string(k + 1) + ": node index out of range");
    edges.emplace_back(i, j);
  }
  ds.adjacency = adjacency_from_edges(n, edges);

  const auto label_lines = detail::read_lines(dir / "labels.csv");
  if (label_lines.size() != n)
    throw LoadError("labels.csv has " + std::to_string(label_lines.size()) + " rows, expected " +
                    std::to_string(n));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int y = 0;
    if (!detail::parse_number(label_lines[i], y))
      throw LoadError("labels.csv line " + std::to_string(i + 1) + ": not an integer");
    if (y != kUnknownLabel && (y < 0 || static_cast<std::size_t>(y) >= c))
      throw LoadError("labels.csv line " + std::to_string(i + 1) + ": label " + std::to_string(y) +
                      " out of range [0," + std::to_string(c) + ")");
    ds.labels[i] = y;
  }

  const nlohmann::json splits = detail::read_json(dir / "splits.json");
  try {
    ds.train = splits.at("train").get<std::vector<std::size_t>>();
    ds.val = splits.at("val").get<std::vector<std::size_t>>();
    ds.test = splits.at("test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("splits.json needs train/val/test index arrays: " + std::string(e.what()));
  }
  for (auto* s : {&ds.train, &ds.val, &ds.test}) std::sort(s->begin(), s->end());

  try {
    ds.validate();
  } catch (const ValidationError& e) {
    throw LoadError(std::string("invalid bundle: ") + e.what());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Stochastic block model fixture

struct SbmSpec {
  std::size_t nodes_per_block = 100;
  std::size_t blocks = 4;
  double p_in = 0.05;
  double p_out = 0.005;
  std::size_t feature_dim = 16;
  double noise = 1.0;  // std-dev of the Gaussian added to every feature
  std::size_t labels_per_class = 2;
  std::size_t val_per_class = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (blocks == 0 || nodes_per_block == 0) throw SpecError("SBM needs at least one non-empty block");
    if (!(p_in >= 0.0 && p_in <= 1.0) || !(p_out >= 0.0 && p_out <= 1.0))
      throw SpecError("SBM probabilities must lie in [0,1]");
    if (!(p_in > p_out)) throw SpecError("SBM intra-block probability must exceed inter-block");
    if (feature_dim < blocks) throw SpecError("SBM feature dimension must be >= block count");
    if (!(noise >= 0.0)) throw SpecError("SBM noise level must be non-negative");
    if (labels_per_class == 0) throw SpecError("SBM needs at least one label per class");
    if (labels_per_class > nodes_per_block)
      throw SpecError("SBM asks for " + std::to_string(labels_per_class) +
                      " labels per class but blocks have " + std::to_string(nodes_per_block) +
                      " nodes");
  }
};

// Independent generator for one aspect (edges, features, splits) of a seeded fixture.
inline std::mt19937_64 seeded_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

inline GraphDataset generate_sbm(const SbmSpec& spec) {
  spec.validate();
  const std::size_t n = spec.blocks * spec.nodes_per_block;
  auto block_of = [&](std::size_t i) { return i / spec.nodes_per_block; };

  GraphDataset ds;
  ds.num_classes = spec.blocks;

  auto edge_rng = seeded_stream(spec.seed, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = block_of(i) == block_of(j) ? spec.p_in : spec.p_out;
      if (unit(edge_rng) < p) edges.emplace_back(i, j);
    }
  ds.adjacency = adjacency_from_edges(n, edges);

  auto feat_rng = seeded_stream(spec.seed, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ds.features = Matrix(n, spec.feature_dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& x : ds.features.row(i)) x = spec.noise * gauss(feat_rng);
    ds.features(i, block_of(i)) += 1.0;
  }

  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(block_of(i));

  auto split_rng = seeded_stream(spec.seed, 3);
  for (std::size_t b = 0; b < spec.blocks; ++b) {
    std::vector<std::size_t> members(spec.nodes_per_block);
    for (std::size_t k = 0; k < members.size(); ++k) members[k] = b * spec.nodes_per_block + k;
    std::shuffle(members.begin(), members.end(), split_rng);
    const std::size_t n_train = spec.labels_per_class;
    const std::size_t n_val = std::min(spec.val_per_class, members.size() - n_train);
    for (std::size_t k = 0; k < members.size(); ++k) {
      auto& dst = k < n_train ? ds.train : (k < n_train + n_val ? ds.val : ds.test);
      dst.push_back(members[k]);
    }
  }
  for (auto* s : {&ds.train, &ds.val, &ds.test}) std::sort(s->begin(), s->end());
  ds.validate();
  return ds;
}

}  // namespace cg3::graph
