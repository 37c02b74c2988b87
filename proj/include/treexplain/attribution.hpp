#pragma once

// Per-feature attribution of a forest prediction.
//
// Two production methods plus a brute-force reference:
//   ti_attribute      decision-path attribution: walking from the root, the
//                     value change across each traversed split is credited
//                     to the split feature; bias is the root value.
//   shap_attribute    Shapley values of the conditional-expectation game in
//                     polynomial time, via path-weight bookkeeping carried
//                     down the tree; bias is the expectation over the
//                     training distribution (empty conditioning set).
//   shapley_oracle    exact Shapley values by enumerating all feature
//                     subsets; exponential, capped by an explicit limit.
//
// Both methods are exactly additive: bias + sum(contributions) equals the
// model prediction. Forest attributions are unweighted means over trees.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "treexplain/errors.hpp"
#include "treexplain/forest.hpp"

namespace treexplain {

enum class Method { Ti, Shap, Oracle };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Ti: return "ti";
    case Method::Shap: return "shap";
    case Method::Oracle: return "oracle";
  }
  return "?";
}

inline Method method_from_string(const std::string& name) {
  if (name == "ti") return Method::Ti;
  if (name == "shap") return Method::Shap;
  if (name == "oracle") return Method::Oracle;
  throw ArgumentError("unknown attribution method \"" + name + "\" (expected ti, shap or oracle)");
}

struct Attribution {
  double bias = 0.0;
  std::vector<double> contributions;
  Method method = Method::Ti;

  double total() const {
    double sum = bias;
    for (double c : contributions) sum += c;
    return sum;
  }
};

// Difference of two attributions of the same shape and method, typically
// anomaly minus baseline.
struct DeltaAttribution {
  std::vector<double> values;
  Method method = Method::Ti;
};

// Feature indices sorted by descending magnitude; magnitudes kept alongside.
struct RankedList {
  std::vector<int> features;
  std::vector<double> magnitudes;

  std::size_t size() const { return features.size(); }
};

// ---------------------------------------------------------------------------
// Conditional expectation by tree descent.

namespace detail {

inline double conditional_expectation_rec(const RegressionTree& tree, int id,
                                          std::span<const double> x,
                                          const std::vector<char>& in_set) {
  const TreeNode& node = tree.nodes[id];
  if (node.kind == NodeKind::Leaf) return node.value;
  if (in_set[node.split_feature]) {
    const int next = x[node.split_feature] <= node.threshold ? node.left : node.right;
    return conditional_expectation_rec(tree, next, x, in_set);
  }
  const double w = static_cast<double>(node.cover);
  const double wl = static_cast<double>(tree.nodes[node.left].cover) / w;
  const double wr = static_cast<double>(tree.nodes[node.right].cover) / w;
  return wl * conditional_expectation_rec(tree, node.left, x, in_set) +
         wr * conditional_expectation_rec(tree, node.right, x, in_set);
}

}  // namespace detail

// E[f(X) | X_S = x_S] under the tree's training distribution: splits on
// features in S follow x, splits outside S average the children weighted by
// cover. S is given as feature indices.
inline double conditional_expectation(const RegressionTree& tree, std::span<const double> x,
                                      std::span<const std::size_t> conditioned) {
  std::vector<char> in_set(x.size(), 0);
  for (std::size_t f : conditioned) {
    if (f >= x.size()) throw ArgumentError("conditioned feature index out of range");
    in_set[f] = 1;
  }
  return detail::conditional_expectation_rec(tree, 0, x, in_set);
}

inline double conditional_expectation(const Forest& forest, std::span<const double> x,
                                      std::span<const std::size_t> conditioned) {
  check_query(forest, x);
  double sum = 0.0;
  for (const auto& tree : forest.trees) {
    sum += conditional_expectation(tree, x, conditioned);
  }
  return sum / static_cast<double>(forest.trees.size());
}

namespace detail {

inline double unconditioned_expectation(const RegressionTree& tree, int id) {
  const TreeNode& node = tree.nodes[id];
  if (node.kind == NodeKind::Leaf) return node.value;
  const double cover = static_cast<double>(node.cover);
  return static_cast<double>(tree.nodes[node.left].cover) / cover *
             unconditioned_expectation(tree, node.left) +
         static_cast<double>(tree.nodes[node.right].cover) / cover *
             unconditioned_expectation(tree, node.right);
}

}  // namespace detail

// Expectation with nothing conditioned: the cover-weighted leaf mean.
inline double expected_value(const RegressionTree& tree) {
  return detail::unconditioned_expectation(tree, 0);
}

// ---------------------------------------------------------------------------
// Decision-path attribution.

inline Attribution ti_attribute(const RegressionTree& tree, std::span<const double> x,
                                std::size_t n_features) {
  Attribution a;
  a.method = Method::Ti;
  a.bias = tree.root().value;
  a.contributions.assign(n_features, 0.0);
  int id = 0;
  while (tree.nodes[id].kind == NodeKind::Internal) {
    const TreeNode& node = tree.nodes[id];
    const int next = x[node.split_feature] <= node.threshold ? node.left : node.right;
    a.contributions[node.split_feature] += tree.nodes[next].value - node.value;
    id = next;
  }
  return a;
}

namespace detail {

inline Attribution mean_over_trees(const Forest& forest, Method method,
                                   Attribution (*per_tree)(const RegressionTree&,
                                                           std::span<const double>, std::size_t),
                                   std::span<const double> x) {
  check_query(forest, x);
  if (forest.trees.empty()) throw ArgumentError("attribute: forest has no trees");
  Attribution total;
  total.method = method;
  total.contributions.assign(forest.n_features(), 0.0);
  for (const auto& tree : forest.trees) {
    Attribution a = per_tree(tree, x, forest.n_features());
    total.bias += a.bias;
    for (std::size_t i = 0; i < total.contributions.size(); ++i) {
      total.contributions[i] += a.contributions[i];
    }
  }
  const double scale = 1.0 / static_cast<double>(forest.trees.size());
  total.bias *= scale;
  for (double& c : total.contributions) c *= scale;
  return total;
}

}  // namespace detail

inline Attribution ti_attribute(const Forest& forest, std::span<const double> x) {
  return detail::mean_over_trees(forest, Method::Ti, &ti_attribute, x);
}

// ---------------------------------------------------------------------------
// Polynomial-time Shapley values.
//
// The recursion keeps, for every distinct feature split on so far, the
// fraction of conditioned paths that flow down (one_fraction), the fraction
// of unconditioned cover that flows down (zero_fraction), and a permutation
// weight per subset size (pweight). EXTEND pushes a feature onto the path,
// UNWIND removes one; at a leaf each feature's share is the leaf value times
// the summed weight difference between paths that include and exclude it.

namespace detail {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

inline void extend_path(PathElement* path, int unique_depth, double zero_fraction,
                        double one_fraction, int feature) {
  path[unique_depth].feature = feature;
  path[unique_depth].zero_fraction = zero_fraction;
  path[unique_depth].one_fraction = one_fraction;
  path[unique_depth].pweight = unique_depth == 0 ? 1.0 : 0.0;
  for (int i = unique_depth - 1; i >= 0; --i) {
    path[i + 1].pweight +=
        one_fraction * path[i].pweight * (i + 1) / static_cast<double>(unique_depth + 1);
    path[i].pweight =
        zero_fraction * path[i].pweight * (unique_depth - i) / static_cast<double>(unique_depth + 1);
  }
}

inline void unwind_path(PathElement* path, int unique_depth, int path_index) {
  const double one_fraction = path[path_index].one_fraction;
  const double zero_fraction = path[path_index].zero_fraction;
  double next_one_portion = path[unique_depth].pweight;
  for (int i = unique_depth - 1; i >= 0; --i) {
    if (one_fraction != 0.0) {
      const double tmp = path[i].pweight;
      path[i].pweight =
          next_one_portion * (unique_depth + 1) / static_cast<double>((i + 1) * one_fraction);
      next_one_portion = tmp - path[i].pweight * zero_fraction * (unique_depth - i) /
                                   static_cast<double>(unique_depth + 1);
    } else {
      path[i].pweight =
          path[i].pweight * (unique_depth + 1) / (zero_fraction * (unique_depth - i));
    }
  }
  for (int i = path_index; i < unique_depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

// Total permutation weight if the element at path_index were unwound,
// without modifying the path.
inline double unwound_path_sum(const PathElement* path, int unique_depth, int path_index) {
  const double one_fraction = path[path_index].one_fraction;
  const double zero_fraction = path[path_index].zero_fraction;
  double next_one_portion = path[unique_depth].pweight;
  double total = 0.0;
  if (one_fraction != 0.0) {
    for (int i = unique_depth - 1; i >= 0; --i) {
      const double tmp = next_one_portion / static_cast<double>((i + 1) * one_fraction);
      total += tmp;
      next_one_portion = path[i].pweight - tmp * zero_fraction * (unique_depth - i);
    }
  } else {
    for (int i = unique_depth - 1; i >= 0; --i) {
      total += path[i].pweight / (zero_fraction * (unique_depth - i));
    }
  }
  return total * (unique_depth + 1);
}

inline void shap_recursive(const RegressionTree& tree, std::span<const double> x, double* phi,
                           int node_id, int unique_depth, PathElement* parent_path,
                           double parent_zero_fraction, double parent_one_fraction,
                           int parent_feature) {
  PathElement* path = parent_path + unique_depth + 1;
  std::copy(parent_path, parent_path + unique_depth + 1, path);
  extend_path(path, unique_depth, parent_zero_fraction, parent_one_fraction, parent_feature);

  const TreeNode& node = tree.nodes[node_id];
  if (node.kind == NodeKind::Leaf) {
    for (int i = 1; i <= unique_depth; ++i) {
      const double w = unwound_path_sum(path, unique_depth, i);
      const PathElement& el = path[i];
      phi[el.feature] += w * (el.one_fraction - el.zero_fraction) * node.value;
    }
    return;
  }

  const int hot = x[node.split_feature] <= node.threshold ? node.left : node.right;
  const int cold = hot == node.left ? node.right : node.left;
  const double cover = static_cast<double>(node.cover);
  const double hot_zero_fraction = static_cast<double>(tree.nodes[hot].cover) / cover;
  const double cold_zero_fraction = static_cast<double>(tree.nodes[cold].cover) / cover;
  double incoming_zero_fraction = 1.0;
  double incoming_one_fraction = 1.0;

  // A feature met again further down the path is unwound and re-extended so
  // its fractions multiply instead of appearing twice.
  int path_index = 0;
  for (; path_index <= unique_depth; ++path_index) {
    if (path[path_index].feature == node.split_feature) break;
  }
  if (path_index != unique_depth + 1) {
    incoming_zero_fraction = path[path_index].zero_fraction;
    incoming_one_fraction = path[path_index].one_fraction;
    unwind_path(path, unique_depth, path_index);
    unique_depth -= 1;
  }

  shap_recursive(tree, x, phi, hot, unique_depth + 1, path,
                 hot_zero_fraction * incoming_zero_fraction, incoming_one_fraction,
                 node.split_feature);
  shap_recursive(tree, x, phi, cold, unique_depth + 1, path,
                 cold_zero_fraction * incoming_zero_fraction, 0.0, node.split_feature);
}

}  // namespace detail

inline Attribution shap_attribute(const RegressionTree& tree, std::span<const double> x,
                                  std::size_t n_features) {
  Attribution a;
  a.method = Method::Shap;
  a.bias = expected_value(tree);
  a.contributions.assign(n_features, 0.0);
  const int maxd = tree.depth + 2;
  std::vector<detail::PathElement> path(maxd * (maxd + 1) / 2);
  detail::shap_recursive(tree, x, a.contributions.data(), 0, 0, path.data(), 1.0, 1.0, -1);
  return a;
}

inline Attribution shap_attribute(const Forest& forest, std::span<const double> x) {
  return detail::mean_over_trees(forest, Method::Shap, &shap_attribute, x);
}

// ---------------------------------------------------------------------------
// Exhaustive Shapley reference.

inline constexpr std::size_t kOracleFeatureLimit = 15;

namespace detail {

inline double masked_expectation(const RegressionTree& tree, int id, std::span<const double> x,
                                 std::uint32_t mask) {
  const TreeNode& node = tree.nodes[id];
  if (node.kind == NodeKind::Leaf) return node.value;
  if (mask & (std::uint32_t{1} << node.split_feature)) {
    const int next = x[node.split_feature] <= node.threshold ? node.left : node.right;
    return masked_expectation(tree, next, x, mask);
  }
  const double cover = static_cast<double>(node.cover);
  return static_cast<double>(tree.nodes[node.left].cover) / cover *
             masked_expectation(tree, node.left, x, mask) +
         static_cast<double>(tree.nodes[node.right].cover) / cover *
             masked_expectation(tree, node.right, x, mask);
}

inline Attribution oracle_from_values(const std::vector<double>& v, std::size_t n) {
  // Shapley weight for a coalition of size s, |N| = n: s! (n-1-s)! / n!
  std::vector<double> weight(n);
  for (std::size_t s = 0; s < n; ++s) {
    double w = 1.0 / static_cast<double>(n);
    for (std::size_t j = 1; j <= s; ++j) {
      w *= static_cast<double>(j) / static_cast<double>(n - j);
    }
    weight[s] = w;
  }
  Attribution a;
  a.method = Method::Oracle;
  a.bias = v[0];
  a.contributions.assign(n, 0.0);
  const std::uint32_t n_masks = std::uint32_t{1} << n;
  for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t bit = std::uint32_t{1} << i;
      if (mask & bit) continue;
      const int s = std::popcount(mask);
      a.contributions[i] += weight[s] * (v[mask | bit] - v[mask]);
    }
  }
  return a;
}

}  // namespace detail

// Exact Shapley values by enumerating all 2^n conditioning sets. Intended as
// a reference for small feature counts; refuses to run past the limit.
inline Attribution shapley_oracle(const Forest& forest, std::span<const double> x,
                                  std::size_t feature_limit = kOracleFeatureLimit) {
  check_query(forest, x);
  const std::size_t n = forest.n_features();
  if (n > feature_limit) {
    throw CapacityError("oracle: " + std::to_string(n) + " features exceeds the exhaustive limit of " +
                        std::to_string(feature_limit));
  }
  std::vector<double> v(std::size_t{1} << n, 0.0);
  const double scale = 1.0 / static_cast<double>(forest.trees.size());
  for (const auto& tree : forest.trees) {
    for (std::uint32_t mask = 0; mask < v.size(); ++mask) {
      v[mask] += scale * detail::masked_expectation(tree, 0, x, mask);
    }
  }
  return detail::oracle_from_values(v, n);
}

inline Attribution shapley_oracle(const RegressionTree& tree, std::span<const double> x,
                                  std::size_t n_features,
                                  std::size_t feature_limit = kOracleFeatureLimit) {
  if (n_features > feature_limit) {
    throw CapacityError("oracle: " + std::to_string(n_features) +
                        " features exceeds the exhaustive limit of " + std::to_string(feature_limit));
  }
  std::vector<double> v(std::size_t{1} << n_features, 0.0);
  for (std::uint32_t mask = 0; mask < v.size(); ++mask) {
    v[mask] = detail::masked_expectation(tree, 0, x, mask);
  }
  return detail::oracle_from_values(v, n_features);
}

// ---------------------------------------------------------------------------

// Dispatch by method tag. Oracle honors the exhaustive feature limit.
inline Attribution attribute(const Forest& forest, std::span<const double> x, Method method) {
  switch (method) {
    case Method::Ti: return ti_attribute(forest, x);
    case Method::Shap: return shap_attribute(forest, x);
    case Method::Oracle: return shapley_oracle(forest, x);
  }
  throw ArgumentError("attribute: invalid method");
}

// anomaly minus baseline, elementwise. Both must come from the same method
// and feature space.
inline DeltaAttribution delta_attribution(const Attribution& anomaly, const Attribution& baseline) {
  if (anomaly.method != baseline.method) {
    throw ArgumentError("delta: cannot mix methods " + std::string(to_string(anomaly.method)) +
                        " and " + to_string(baseline.method));
  }
  if (anomaly.contributions.size() != baseline.contributions.size()) {
    throw ArgumentError("delta: attribution sizes differ");
  }
  DeltaAttribution d;
  d.method = anomaly.method;
  d.values.resize(anomaly.contributions.size());
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    d.values[i] = anomaly.contributions[i] - baseline.contributions[i];
  }
  return d;
}

// Features ordered by descending |value|; equal magnitudes break toward the
// lower feature index.
inline RankedList rank_values(std::span<const double> values) {
  RankedList ranked;
  ranked.features.resize(values.size());
  std::iota(ranked.features.begin(), ranked.features.end(), 0);
  std::stable_sort(ranked.features.begin(), ranked.features.end(), [&](int a, int b) {
    return std::abs(values[a]) > std::abs(values[b]);
  });
  ranked.magnitudes.reserve(values.size());
  for (int f : ranked.features) ranked.magnitudes.push_back(std::abs(values[f]));
  return ranked;
}

inline RankedList rank_features(const Attribution& a) { return rank_values(a.contributions); }
inline RankedList rank_features(const DeltaAttribution& d) { return rank_values(d.values); }

}  // namespace treexplain
