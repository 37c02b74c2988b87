#pragma once

// Regression trees and forests. Trees are grown with variance-reduction
// splits (axis-aligned, "go left iff value <= threshold"); forests average
// unweighted over trees. Models serialize to a versioned JSON format.
//
// Determinism contract: identical data, params and seed produce identical
// trees, regardless of how many worker threads fit_forest uses. All node
// statistics are accumulated in value-sorted order, so permuting the input
// rows cannot change a tree grown without bootstrap or feature sampling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "treexplain/dataset.hpp"
#include "treexplain/errors.hpp"
#include "treexplain/parallel.hpp"

namespace treexplain {

inline constexpr int kModelFormatVersion = 1;

enum class NodeKind { Internal, Leaf };

struct TreeNode {
  NodeKind kind = NodeKind::Leaf;
  int split_feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;       // mean target of the samples reaching the node
  std::int64_t cover = 0;   // number of in-bag samples reaching the node
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // root at index 0, children after parents
  int depth = 0;                // longest root-to-leaf path, in edges

  const TreeNode& root() const { return nodes.front(); }
};

struct ForestParams {
  int n_estimators = 100;
  int max_depth = 10;
  int min_samples_leaf = 1;
  bool bootstrap = true;
  double feature_fraction = 1.0;
  std::uint64_t seed = 42;

  void validate() const {
    if (n_estimators < 1) throw ArgumentError("params: n_estimators must be at least 1");
    if (max_depth < 0) throw ArgumentError("params: max_depth must be non-negative");
    if (min_samples_leaf < 1) throw ArgumentError("params: min_samples_leaf must be at least 1");
    if (!(feature_fraction > 0.0) || feature_fraction > 1.0) {
      throw ArgumentError("params: feature_fraction must be in (0, 1]");
    }
  }
};

struct Forest {
  std::vector<RegressionTree> trees;
  ForestParams params;
  std::vector<std::string> feature_names;

  std::size_t n_features() const { return feature_names.size(); }
};

namespace detail {

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Best variance-reduction split over the candidate features. Candidates are
// scanned in ascending feature order and thresholds in ascending value
// order; only strictly better gains replace the incumbent, so ties resolve
// to the lowest feature index and smallest threshold.
inline SplitChoice best_split(const Dataset& data, const std::vector<std::size_t>& rows,
                              const std::vector<int>& candidates, int min_samples_leaf) {
  const std::size_t n = rows.size();
  SplitChoice best;
  std::vector<std::pair<double, double>> points(n);  // (feature value, target)
  for (int f : candidates) {
    for (std::size_t i = 0; i < n; ++i) {
      points[i] = {data.feature(rows[i], f), data.targets[rows[i]]};
    }
    // Sorting by (value, target) fixes the accumulation order no matter how
    // the caller ordered the rows.
    std::sort(points.begin(), points.end());

    double total_sum = 0.0, total_sumsq = 0.0;
    for (const auto& [v, y] : points) {
      total_sum += y;
      total_sumsq += y * y;
    }
    const double total_sse =
        std::max(0.0, total_sumsq - total_sum * total_sum / static_cast<double>(n));

    double left_sum = 0.0, left_sumsq = 0.0;
    double best_score = total_sse;  // sse_left + sse_right must beat this
    double best_threshold = 0.0;
    bool found = false;
    for (std::size_t i = 1; i < n; ++i) {
      left_sum += points[i - 1].second;
      left_sumsq += points[i - 1].second * points[i - 1].second;
      if (points[i].first == points[i - 1].first) continue;
      const auto n_left = static_cast<double>(i);
      const auto n_right = static_cast<double>(n - i);
      if (i < static_cast<std::size_t>(min_samples_leaf) ||
          n - i < static_cast<std::size_t>(min_samples_leaf)) {
        continue;
      }
      const double sse_left = std::max(0.0, left_sumsq - left_sum * left_sum / n_left);
      const double right_sum = total_sum - left_sum;
      const double right_sumsq = total_sumsq - left_sumsq;
      const double sse_right = std::max(0.0, right_sumsq - right_sum * right_sum / n_right);
      const double score = sse_left + sse_right;
      if (score < best_score) {
        best_score = score;
        best_threshold = 0.5 * (points[i - 1].first + points[i].first);
        found = true;
      }
    }
    const double gain = total_sse - best_score;
    if (found && gain > best.gain) {
      best.found = true;
      best.feature = f;
      best.threshold = best_threshold;
      best.gain = gain;
    }
  }
  return best;
}

// Mean and sum of squared deviations, accumulated over sorted targets so the
// result is independent of row order.
inline std::pair<double, double> value_and_sse(const Dataset& data,
                                               const std::vector<std::size_t>& rows,
                                               std::vector<double>& scratch) {
  scratch.clear();
  for (std::size_t r : rows) scratch.push_back(data.targets[r]);
  std::sort(scratch.begin(), scratch.end());
  double sum = 0.0;
  for (double y : scratch) sum += y;
  const double mean = sum / static_cast<double>(scratch.size());
  double sse = 0.0;
  for (double y : scratch) sse += (y - mean) * (y - mean);
  return {mean, sse};
}

struct GrowJob {
  std::vector<std::size_t> rows;
  int depth = 0;
  int parent = -1;
  bool is_left = false;
};

inline RegressionTree grow_tree(const Dataset& data, const std::vector<std::size_t>& all_rows,
                                const ForestParams& params, std::mt19937_64& rng) {
  const int n_features = static_cast<int>(data.n_features());
  int n_candidates = n_features;
  if (params.feature_fraction < 1.0) {
    n_candidates = std::max(
        1, static_cast<int>(std::ceil(params.feature_fraction * n_features)));
  }
  std::vector<int> feature_pool(n_features);
  std::iota(feature_pool.begin(), feature_pool.end(), 0);

  RegressionTree tree;
  std::vector<double> scratch;
  // Explicit stack instead of recursion; pushing the right child first makes
  // node ids come out in preorder.
  std::vector<GrowJob> stack;
  stack.push_back(GrowJob{all_rows, 0, -1, false});
  while (!stack.empty()) {
    GrowJob job = std::move(stack.back());
    stack.pop_back();
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (job.parent >= 0) {
      (job.is_left ? tree.nodes[job.parent].left : tree.nodes[job.parent].right) = id;
    }
    tree.depth = std::max(tree.depth, job.depth);

    auto [mean, sse] = value_and_sse(data, job.rows, scratch);
    TreeNode& node = tree.nodes[id];
    node.value = mean;
    node.cover = static_cast<std::int64_t>(job.rows.size());

    if (job.depth >= params.max_depth || sse <= 0.0 ||
        job.rows.size() < 2 * static_cast<std::size_t>(params.min_samples_leaf)) {
      continue;
    }

    std::vector<int> candidates;
    if (n_candidates == n_features) {
      candidates = feature_pool;
    } else {
      std::vector<int> pool = feature_pool;
      for (int i = 0; i < n_candidates; ++i) {
        std::uniform_int_distribution<int> pick(i, n_features - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      candidates.assign(pool.begin(), pool.begin() + n_candidates);
      std::sort(candidates.begin(), candidates.end());
    }

    SplitChoice split = best_split(data, job.rows, candidates, params.min_samples_leaf);
    if (!split.found) continue;

    node.kind = NodeKind::Internal;
    node.split_feature = split.feature;
    node.threshold = split.threshold;

    GrowJob left{{}, job.depth + 1, id, true};
    GrowJob right{{}, job.depth + 1, id, false};
    for (std::size_t r : job.rows) {
      if (data.feature(r, split.feature) <= split.threshold) {
        left.rows.push_back(r);
      } else {
        right.rows.push_back(r);
      }
    }
    stack.push_back(std::move(right));
    stack.push_back(std::move(left));
  }
  return tree;
}

inline std::mt19937_64 tree_rng(std::uint64_t seed, int tree_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tree_index)};
  return std::mt19937_64(seq);
}

}  // namespace detail

// Grows a single tree on every row of `train`. tree_seed drives feature
// subsampling only; bootstrap resampling is the forest's job.
inline RegressionTree fit_tree(const Dataset& train, const ForestParams& params,
                               std::uint64_t tree_seed) {
  params.validate();
  if (train.n_rows() == 0) throw ArgumentError("fit_tree: empty training data");
  std::vector<std::size_t> rows(train.n_rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::mt19937_64 rng(tree_seed);
  RegressionTree tree = detail::grow_tree(train, rows, params, rng);
  return tree;
}

// Fits params.n_estimators trees, each from its own seed stream derived from
// (params.seed, tree index). With bootstrap enabled every tree trains on n
// rows drawn with replacement. jobs > 1 fits trees concurrently; the result
// does not depend on the job count.
inline Forest fit_forest(const Dataset& train, const ForestParams& params, unsigned jobs = 1) {
  params.validate();
  if (train.n_rows() == 0) throw ArgumentError("fit_forest: empty training data");
  Forest forest;
  forest.params = params;
  forest.feature_names = train.feature_names;
  forest.trees.resize(params.n_estimators);
  parallel_for(params.n_estimators, jobs, [&](std::size_t t) {
    std::mt19937_64 rng = detail::tree_rng(params.seed, static_cast<int>(t));
    const std::uint64_t growth_seed = rng();
    if (params.bootstrap) {
      std::vector<std::size_t> rows(train.n_rows());
      std::uniform_int_distribution<std::size_t> pick(0, train.n_rows() - 1);
      for (auto& r : rows) r = pick(rng);
      forest.trees[t] = fit_tree(select_rows(train, rows), params, growth_seed);
    } else {
      forest.trees[t] = fit_tree(train, params, growth_seed);
    }
  });
  return forest;
}

inline double predict(const RegressionTree& tree, std::span<const double> x) {
  int id = 0;
  while (tree.nodes[id].kind == NodeKind::Internal) {
    const TreeNode& node = tree.nodes[id];
    id = x[node.split_feature] <= node.threshold ? node.left : node.right;
  }
  return tree.nodes[id].value;
}

inline void check_query(const Forest& forest, std::span<const double> x) {
  if (x.size() != forest.n_features()) {
    throw ArgumentError("query has " + std::to_string(x.size()) + " features, model expects " +
                        std::to_string(forest.n_features()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw ArgumentError("query features must be finite");
  }
}

// Unweighted mean of the per-tree predictions.
inline double predict(const Forest& forest, std::span<const double> x) {
  check_query(forest, x);
  if (forest.trees.empty()) throw ArgumentError("predict: forest has no trees");
  double sum = 0.0;
  for (const auto& tree : forest.trees) sum += predict(tree, x);
  return sum / static_cast<double>(forest.trees.size());
}

inline double mean_squared_error(const Forest& forest, const Dataset& data) {
  if (data.n_rows() == 0) throw ArgumentError("mean_squared_error: empty data");
  double sum = 0.0;
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    const double err = predict(forest, data.row(r)) - data.targets[r];
    sum += err * err;
  }
  return sum / static_cast<double>(data.n_rows());
}

namespace detail {

inline nlohmann::json node_to_json(const TreeNode& node) {
  nlohmann::json j;
  if (node.kind == NodeKind::Internal) {
    j["kind"] = "internal";
    j["feature"] = node.split_feature;
    j["threshold"] = node.threshold;
    j["left"] = node.left;
    j["right"] = node.right;
  } else {
    j["kind"] = "leaf";
    j["feature"] = nullptr;
    j["threshold"] = nullptr;
    j["left"] = nullptr;
    j["right"] = nullptr;
  }
  j["value"] = node.value;
  j["cover"] = node.cover;
  return j;
}

inline TreeNode node_from_json(const nlohmann::json& j, std::size_t n_nodes,
                               std::size_t n_features) {
  TreeNode node;
  const std::string kind = j.at("kind").get<std::string>();
  node.value = j.at("value").get<double>();
  node.cover = j.at("cover").get<std::int64_t>();
  if (!std::isfinite(node.value)) throw FormatError("model: node value is not finite");
  if (node.cover < 1) throw FormatError("model: node cover must be positive");
  if (kind == "leaf") {
    node.kind = NodeKind::Leaf;
  } else if (kind == "internal") {
    node.kind = NodeKind::Internal;
    node.split_feature = j.at("feature").get<int>();
    node.threshold = j.at("threshold").get<double>();
    node.left = j.at("left").get<int>();
    node.right = j.at("right").get<int>();
    if (node.split_feature < 0 || node.split_feature >= static_cast<int>(n_features)) {
      throw FormatError("model: split feature index out of range");
    }
    if (!std::isfinite(node.threshold)) throw FormatError("model: threshold is not finite");
    for (int child : {node.left, node.right}) {
      if (child < 1 || child >= static_cast<int>(n_nodes)) {
        throw FormatError("model: child index out of range");
      }
    }
    if (node.left == node.right) throw FormatError("model: children must be distinct");
  } else {
    throw FormatError("model: unknown node kind \"" + kind + "\"");
  }
  return node;
}

// Every node must be reachable from the root exactly once.
inline int check_tree_structure(const RegressionTree& tree) {
  std::vector<char> visited(tree.nodes.size(), 0);
  std::vector<std::pair<int, int>> stack{{0, 0}};  // (node, depth in edges)
  int depth = 0;
  while (!stack.empty()) {
    auto [id, d] = stack.back();
    stack.pop_back();
    if (visited[id]) throw FormatError("model: node " + std::to_string(id) + " visited twice");
    visited[id] = 1;
    depth = std::max(depth, d);
    const TreeNode& node = tree.nodes[id];
    if (node.kind == NodeKind::Internal) {
      stack.push_back({node.left, d + 1});
      stack.push_back({node.right, d + 1});
    }
  }
  for (std::size_t i = 0; i < visited.size(); ++i) {
    if (!visited[i]) throw FormatError("model: node " + std::to_string(i) + " is unreachable");
  }
  return depth;
}

}  // namespace detail

inline nlohmann::json model_to_json(const Forest& forest) {
  nlohmann::json j;
  j["version"] = kModelFormatVersion;
  j["params"] = {{"n_estimators", forest.params.n_estimators},
                 {"max_depth", forest.params.max_depth},
                 {"min_samples_leaf", forest.params.min_samples_leaf},
                 {"bootstrap", forest.params.bootstrap},
                 {"feature_fraction", forest.params.feature_fraction},
                 {"seed", forest.params.seed}};
  j["feature_names"] = forest.feature_names;
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& tree : forest.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& node : tree.nodes) nodes.push_back(detail::node_to_json(node));
    trees.push_back(std::move(nodes));
  }
  j["trees"] = std::move(trees);
  return j;
}

inline Forest model_from_json(const nlohmann::json& doc) {
  try {
    const int version = doc.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw FormatError("model: unsupported format version " + std::to_string(version) +
                        " (supported: " + std::to_string(kModelFormatVersion) + ")");
    }
    Forest forest;
    const auto& params = doc.at("params");
    forest.params.n_estimators = params.at("n_estimators").get<int>();
    forest.params.max_depth = params.at("max_depth").get<int>();
    forest.params.min_samples_leaf = params.at("min_samples_leaf").get<int>();
    forest.params.bootstrap = params.at("bootstrap").get<bool>();
    forest.params.feature_fraction = params.at("feature_fraction").get<double>();
    forest.params.seed = params.at("seed").get<std::uint64_t>();
    forest.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    if (forest.feature_names.empty()) throw FormatError("model: feature_names is empty");

    const auto& trees = doc.at("trees");
    if (!trees.is_array() || trees.empty()) throw FormatError("model: no trees");
    for (const auto& tree_json : trees) {
      if (!tree_json.is_array() || tree_json.empty()) {
        throw FormatError("model: tree must be a non-empty node array");
      }
      RegressionTree tree;
      for (const auto& node_json : tree_json) {
        tree.nodes.push_back(
            detail::node_from_json(node_json, tree_json.size(), forest.feature_names.size()));
      }
      tree.depth = detail::check_tree_structure(tree);
      forest.trees.push_back(std::move(tree));
    }
    return forest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model: malformed document: ") + e.what());
  }
}

// Writes the model as JSON. Output is byte-identical for identical forests.
inline void save_model(const Forest& forest, const std::string& path) {
  write_text_file(path, model_to_json(forest).dump(1) + "\n");
}

inline Forest load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model file is not valid JSON: " + path + ": " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace treexplain
