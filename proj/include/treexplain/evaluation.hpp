#pragma once

// Evaluation of attribution quality without ground-truth explanations:
// agreement between methods (rank-biased overlap), stability (variance of
// top magnitudes), and interventional accuracy against pairs of inputs that
// differ in a single treatment variable, either found in the data (implicit)
// or constructed by perturbing it (explicit).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "treexplain/attribution.hpp"
#include "treexplain/dataset.hpp"
#include "treexplain/errors.hpp"
#include "treexplain/forest.hpp"
#include "treexplain/parallel.hpp"

namespace treexplain {

// ---------------------------------------------------------------------------
// Rank-biased overlap.

struct RboParams {
  double p = 0.9;                 // top-weightedness; higher looks deeper
  std::optional<int> depth = {};  // evaluation depth k; empty means full length
};

// Extrapolated rank-biased overlap of two rankings over the same feature
// set. With prefix overlap X_d at depth d and evaluation depth k:
//   rbo = (X_k / k) p^k + (1-p)/p * sum_{d=1..k} (X_d / d) p^d
// Symmetric in its arguments, 1 for identical rankings, 0 when the top-k
// prefixes share nothing.
inline double rbo(const RankedList& a, const RankedList& b, const RboParams& params = {}) {
  if (!(params.p > 0.0) || !(params.p < 1.0)) {
    throw ArgumentError("rbo: p must lie strictly between 0 and 1");
  }
  if (a.size() != b.size() || a.size() == 0) {
    throw ArgumentError("rbo: rankings must be non-empty and equally long");
  }
  std::vector<int> sa = a.features, sb = b.features;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  if (std::adjacent_find(sa.begin(), sa.end()) != sa.end()) {
    throw ArgumentError("rbo: ranking repeats a feature");
  }
  if (sa != sb) throw ArgumentError("rbo: rankings cover different feature sets");

  const int n = static_cast<int>(a.size());
  const int k = params.depth.value_or(n);
  if (k < 1 || k > n) {
    throw ArgumentError("rbo: depth " + std::to_string(k) + " out of range [1, " +
                        std::to_string(n) + "]");
  }

  std::unordered_set<int> pending;  // features seen in exactly one prefix
  int overlap = 0;
  double weighted_sum = 0.0;
  double pd = params.p;  // p^d
  double pk = params.p;
  for (int d = 1; d <= k; ++d) {
    const int ea = a.features[d - 1];
    const int eb = b.features[d - 1];
    if (ea == eb) {
      ++overlap;
    } else {
      if (pending.erase(ea)) ++overlap; else pending.insert(ea);
      if (pending.erase(eb)) ++overlap; else pending.insert(eb);
    }
    weighted_sum += static_cast<double>(overlap) / d * pd;
    pk = pd;
    pd *= params.p;
  }
  return static_cast<double>(overlap) / k * pk +
         (1.0 - params.p) / params.p * weighted_sum;
}

// ---------------------------------------------------------------------------
// Shared helpers.

// Attributes every row of `data`. Row i of the result corresponds to row i
// of the data regardless of the job count.
inline std::vector<Attribution> attribute_batch(const Forest& forest, const Dataset& data,
                                                Method method, unsigned jobs = 1) {
  std::vector<Attribution> out(data.n_rows());
  parallel_for(data.n_rows(), jobs,
               [&](std::size_t r) { out[r] = attribute(forest, data.row(r), method); });
  return out;
}

namespace detail {

// Lower median: for an even count the smaller of the two middle elements.
inline double lower_median(std::vector<double> values) {
  if (values.empty()) throw ArgumentError("median of empty sequence");
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  return values[mid];
}

inline std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", rate * 100.0);
  return buf;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ranking similarity between two methods.

struct SimilarityEntry {
  std::optional<int> depth;  // empty means full-length rankings
  double median = 0.0;
  std::vector<double> per_point;
};

struct SimilarityReport {
  Method method_a = Method::Shap;
  Method method_b = Method::Ti;
  double p = 0.9;
  std::vector<SimilarityEntry> entries;
};

// Per-point rank-biased overlap between the two methods' attribution
// rankings, reported as the median over rows for each requested depth.
// Depths that exceed the feature count are dropped.
inline SimilarityReport similarity_report(const Forest& forest, const Dataset& data,
                                          Method method_a, Method method_b, double p = 0.9,
                                          std::vector<std::optional<int>> depths =
                                              {std::nullopt, 5, 3},
                                          unsigned jobs = 1) {
  if (data.n_rows() == 0) throw ArgumentError("similarity_report: empty data");
  SimilarityReport report;
  report.method_a = method_a;
  report.method_b = method_b;
  report.p = p;

  const auto attr_a = attribute_batch(forest, data, method_a, jobs);
  const auto attr_b = attribute_batch(forest, data, method_b, jobs);
  std::vector<RankedList> ranks_a(data.n_rows()), ranks_b(data.n_rows());
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    ranks_a[r] = rank_features(attr_a[r]);
    ranks_b[r] = rank_features(attr_b[r]);
  }

  const int n = static_cast<int>(forest.n_features());
  for (const auto& depth : depths) {
    if (depth && (*depth < 1 || *depth > n)) continue;
    SimilarityEntry entry;
    entry.depth = depth;
    entry.per_point.resize(data.n_rows());
    RboParams params{p, depth};
    for (std::size_t r = 0; r < data.n_rows(); ++r) {
      entry.per_point[r] = rbo(ranks_a[r], ranks_b[r], params);
    }
    entry.median = detail::lower_median(entry.per_point);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Attribution variance.

// Population variance of the k largest |values|. k empty means all values.
inline double top_magnitude_variance(std::span<const double> values, std::optional<int> k = {}) {
  if (values.empty()) throw ArgumentError("variance of empty attribution");
  const int n = static_cast<int>(values.size());
  const int kk = k.value_or(n);
  if (kk < 1 || kk > n) {
    throw ArgumentError("variance: k " + std::to_string(kk) + " out of range [1, " +
                        std::to_string(n) + "]");
  }
  std::vector<double> mags(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) mags[i] = std::abs(values[i]);
  std::nth_element(mags.begin(), mags.begin() + (kk - 1), mags.end(), std::greater<double>());
  double mean = 0.0;
  for (int i = 0; i < kk; ++i) mean += mags[i];
  mean /= kk;
  double var = 0.0;
  for (int i = 0; i < kk; ++i) var += (mags[i] - mean) * (mags[i] - mean);
  return var / kk;
}

// Median over rows of the population variance of each row's top-k
// attribution magnitudes. Spread-out attributions score high, attributions
// concentrated on a few features score low.
inline double attribution_variance(const Forest& forest, const Dataset& data, Method method,
                                   std::optional<int> k = {}, unsigned jobs = 1) {
  if (data.n_rows() == 0) throw ArgumentError("attribution_variance: empty data");
  const int n = static_cast<int>(forest.n_features());
  const int kk = k.value_or(n);
  if (kk < 1 || kk > n) {
    throw ArgumentError("attribution_variance: k " + std::to_string(kk) + " out of range [1, " +
                        std::to_string(n) + "]");
  }
  const auto attrs = attribute_batch(forest, data, method, jobs);
  std::vector<double> per_point(data.n_rows());
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    per_point[r] = top_magnitude_variance(attrs[r].contributions, k);
  }
  return detail::lower_median(per_point);
}

struct VarianceReport {
  std::vector<std::optional<int>> ks;
  std::vector<Method> methods;
  std::vector<std::vector<double>> medians;  // [k index][method index]
};

inline VarianceReport variance_report(const Forest& forest, const Dataset& data,
                                      std::vector<Method> methods,
                                      std::vector<std::optional<int>> ks = {std::nullopt, 5, 3},
                                      unsigned jobs = 1) {
  VarianceReport report;
  report.methods = std::move(methods);
  const int n = static_cast<int>(forest.n_features());
  for (const auto& k : ks) {
    if (k && (*k < 1 || *k > n)) continue;
    report.ks.push_back(k);
  }
  report.medians.assign(report.ks.size(), std::vector<double>(report.methods.size(), 0.0));
  for (std::size_t m = 0; m < report.methods.size(); ++m) {
    const auto attrs = attribute_batch(forest, data, report.methods[m], jobs);
    for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
      std::vector<double> per_point(data.n_rows());
      for (std::size_t r = 0; r < data.n_rows(); ++r) {
        per_point[r] = top_magnitude_variance(attrs[r].contributions, report.ks[ki]);
      }
      report.medians[ki][m] = detail::lower_median(per_point);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Interventional accuracy.

struct AccuracyCell {
  std::string treatment;
  int k = 1;
  long long hits = 0;
  long long samples = 0;

  bool empty() const { return samples == 0; }
  double rate() const { return samples == 0 ? 0.0 : static_cast<double>(hits) / samples; }
};

struct AccuracyReport {
  Method method = Method::Ti;
  std::vector<int> ks;
  std::vector<std::string> treatments;
  std::vector<std::vector<AccuracyCell>> cells;  // [treatment index][k index]

  bool has_empty_cells() const {
    for (const auto& row : cells) {
      for (const auto& cell : row) {
        if (cell.empty()) return true;
      }
    }
    return cells.empty();
  }

  // Mean rate over treatments with at least one sample; empty when none.
  std::optional<double> average(std::size_t k_index) const {
    double sum = 0.0;
    int counted = 0;
    for (const auto& row : cells) {
      if (!row[k_index].empty()) {
        sum += row[k_index].rate();
        ++counted;
      }
    }
    if (counted == 0) return std::nullopt;
    return sum / counted;
  }
};

namespace detail {

inline std::vector<int> checked_ks(std::vector<int> ks) {
  if (ks.empty()) throw ArgumentError("accuracy: need at least one top-k depth");
  for (int k : ks) {
    if (k < 1) throw ArgumentError("accuracy: top-k depth must be positive");
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

inline AccuracyReport make_report(Method method, std::vector<int> ks,
                                  const std::vector<std::string>& treatments) {
  AccuracyReport report;
  report.method = method;
  report.ks = std::move(ks);
  report.treatments = treatments;
  report.cells.resize(treatments.size());
  for (std::size_t t = 0; t < treatments.size(); ++t) {
    for (int k : report.ks) {
      report.cells[t].push_back(AccuracyCell{treatments[t], k, 0, 0});
    }
  }
  return report;
}

// True when `feature` appears among the first k entries of the ranking.
inline bool hit_within(const RankedList& ranked, std::size_t feature, int k) {
  const int limit = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int i = 0; i < limit; ++i) {
    if (ranked.features[i] == static_cast<int>(feature)) return true;
  }
  return false;
}

}  // namespace detail

// Accuracy on naturally occurring interventions. Within each template, a
// pair of rows qualifies when exactly one treatment column differs and all
// other treatment columns agree (covariate agreement is what the template
// encodes). The higher-target row of the pair counts as the anomaly; a hit
// at depth k means the differing treatment ranks among the top k entries of
// |anomaly attribution - baseline attribution|. Datasets with no qualifying
// pairs yield a report whose cells all have zero samples.
inline AccuracyReport implicit_accuracy(const Forest& forest,
                                        const std::vector<Template>& templates,
                                        const Dataset& data, Method method,
                                        std::vector<int> ks = {1, 3}, unsigned jobs = 1) {
  AccuracyReport report =
      detail::make_report(method, detail::checked_ks(std::move(ks)), data.schema.treatment_columns);
  const auto treat_idx = data.treatment_feature_indices();

  struct Pair {
    std::size_t anomaly;
    std::size_t baseline;
    std::size_t treatment;  // position within the treatment columns
  };
  std::vector<Pair> pairs;
  for (const auto& tpl : templates) {
    for (std::size_t a = 0; a < tpl.member_indices.size(); ++a) {
      for (std::size_t b = a + 1; b < tpl.member_indices.size(); ++b) {
        const std::size_t i = tpl.member_indices[a];
        const std::size_t j = tpl.member_indices[b];
        if (i >= data.n_rows() || j >= data.n_rows()) {
          throw ArgumentError("implicit_accuracy: template row index out of range");
        }
        std::size_t differing = 0;
        std::size_t n_diff = 0;
        for (std::size_t t = 0; t < treat_idx.size(); ++t) {
          if (data.feature(i, treat_idx[t]) != data.feature(j, treat_idx[t])) {
            differing = t;
            if (++n_diff > 1) break;
          }
        }
        if (n_diff != 1) continue;
        const bool i_is_anomaly =
            data.targets[i] > data.targets[j] || (data.targets[i] == data.targets[j] && i > j);
        pairs.push_back(Pair{i_is_anomaly ? i : j, i_is_anomaly ? j : i, differing});
      }
    }
  }

  // Only rows that participate in a pair get attributed.
  std::vector<std::size_t> needed;
  for (const auto& pr : pairs) {
    needed.push_back(pr.anomaly);
    needed.push_back(pr.baseline);
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  std::vector<Attribution> attrs(needed.size());
  parallel_for(needed.size(), jobs,
               [&](std::size_t i) { attrs[i] = attribute(forest, data.row(needed[i]), method); });
  auto attribution_of = [&](std::size_t row) -> const Attribution& {
    const auto it = std::lower_bound(needed.begin(), needed.end(), row);
    return attrs[static_cast<std::size_t>(it - needed.begin())];
  };

  for (const auto& pr : pairs) {
    const RankedList ranked =
        rank_features(delta_attribution(attribution_of(pr.anomaly), attribution_of(pr.baseline)));
    for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
      AccuracyCell& cell = report.cells[pr.treatment][ki];
      cell.samples += 1;
      if (detail::hit_within(ranked, treat_idx[pr.treatment], report.ks[ki])) cell.hits += 1;
    }
  }
  return report;
}

// Accuracy on constructed interventions. Every row is perturbed once per
// treatment and direction: the level moves by +1 or -1 modulo the treatment
// cardinality, everything else held fixed. A hit at depth k means the
// perturbed treatment ranks among the top k entries of
// |perturbed attribution - original attribution|.
inline AccuracyReport explicit_accuracy(const Forest& forest, const Dataset& data, Method method,
                                        std::vector<int> ks = {1, 3}, unsigned jobs = 1) {
  if (data.n_rows() == 0) throw ArgumentError("explicit_accuracy: empty data");
  if (data.n_treatments() == 0) throw ArgumentError("explicit_accuracy: no treatment columns");
  AccuracyReport report =
      detail::make_report(method, detail::checked_ks(std::move(ks)), data.schema.treatment_columns);
  const auto treat_idx = data.treatment_feature_indices();
  const int cardinality = data.schema.treatment_cardinality;

  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    for (std::size_t f : treat_idx) {
      const double level = data.feature(r, f);
      if (level != std::floor(level) || level < 0 || level >= cardinality) {
        throw ValidationError("explicit_accuracy: treatment level out of range at row " +
                              std::to_string(r + 1));
      }
    }
  }

  // hits[row][treatment][direction][k index]
  struct RowCounts {
    std::vector<char> hit;
  };
  const std::size_t slots = treat_idx.size() * 2 * report.ks.size();
  std::vector<RowCounts> per_row(data.n_rows());
  parallel_for(data.n_rows(), jobs, [&](std::size_t r) {
    RowCounts counts;
    counts.hit.assign(slots, 0);
    const Attribution base = attribute(forest, data.row(r), method);
    std::vector<double> x(data.row(r).begin(), data.row(r).end());
    std::size_t slot = 0;
    for (std::size_t t = 0; t < treat_idx.size(); ++t) {
      const int level = static_cast<int>(x[treat_idx[t]]);
      for (int delta : {+1, -1}) {
        const double original = x[treat_idx[t]];
        x[treat_idx[t]] = ((level + delta) % cardinality + cardinality) % cardinality;
        const Attribution perturbed = attribute(forest, x, method);
        x[treat_idx[t]] = original;
        const RankedList ranked = rank_features(delta_attribution(perturbed, base));
        for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
          counts.hit[slot + ki] =
              detail::hit_within(ranked, treat_idx[t], report.ks[ki]) ? 1 : 0;
        }
        slot += report.ks.size();
      }
    }
    per_row[r] = std::move(counts);
  });

  for (const auto& counts : per_row) {
    std::size_t slot = 0;
    for (std::size_t t = 0; t < treat_idx.size(); ++t) {
      for (int direction = 0; direction < 2; ++direction) {
        for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
          AccuracyCell& cell = report.cells[t][ki];
          cell.samples += 1;
          cell.hits += counts.hit[slot + ki];
        }
        slot += report.ks.size();
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report rendering.

inline std::string to_text(const AccuracyReport& report, const std::string& title) {
  std::string out = title + " (method: " + to_string(report.method) + ")\n";
  out += "treatment";
  for (int k : report.ks) out += "\ttop-" + std::to_string(k);
  out += "\n";
  for (std::size_t t = 0; t < report.treatments.size(); ++t) {
    out += report.treatments[t];
    for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
      const AccuracyCell& cell = report.cells[t][ki];
      out += '\t';
      if (cell.empty()) {
        out += "n/a (0 samples)";
      } else {
        out += detail::format_rate(cell.rate()) + " (" + std::to_string(cell.hits) + "/" +
               std::to_string(cell.samples) + ")";
      }
    }
    out += '\n';
  }
  out += "average";
  for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
    const auto avg = report.average(ki);
    out += '\t';
    out += avg ? detail::format_rate(*avg) : "n/a";
  }
  out += '\n';
  return out;
}

inline nlohmann::json to_json(const AccuracyReport& report, const std::string& metric) {
  nlohmann::json j;
  j["metric"] = metric;
  j["params"] = {{"method", to_string(report.method)}, {"ks", report.ks}};
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& row : report.cells) {
    for (const auto& cell : row) {
      nlohmann::json c = {{"treatment", cell.treatment},
                          {"k", cell.k},
                          {"hits", cell.hits},
                          {"samples", cell.samples}};
      if (cell.empty()) {
        c["rate"] = nullptr;
      } else {
        c["rate"] = cell.rate();
      }
      cells.push_back(std::move(c));
    }
  }
  j["cells"] = std::move(cells);
  nlohmann::json averages = nlohmann::json::array();
  for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
    const auto avg = report.average(ki);
    averages.push_back({{"k", report.ks[ki]}, {"rate", avg ? nlohmann::json(*avg) : nullptr}});
  }
  j["averages"] = std::move(averages);
  return j;
}

namespace detail {

inline std::string depth_label(const std::optional<int>& depth) {
  return depth ? "top-" + std::to_string(*depth) : "all";
}

}  // namespace detail

inline std::string to_text(const SimilarityReport& report) {
  std::string out = "ranking similarity, " + std::string(to_string(report.method_a)) + " vs " +
                    to_string(report.method_b) + " (rbo, p=" + detail::format_fixed(report.p, 2) +
                    ")\n";
  out += "depth\tmedian rbo\n";
  for (const auto& entry : report.entries) {
    out += detail::depth_label(entry.depth) + "\t" + detail::format_fixed(entry.median, 4) + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const SimilarityReport& report) {
  nlohmann::json j;
  j["metric"] = "rbo_similarity";
  j["params"] = {{"p", report.p},
                 {"method_a", to_string(report.method_a)},
                 {"method_b", to_string(report.method_b)}};
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& entry : report.entries) {
    nlohmann::json c;
    c["depth"] = entry.depth ? nlohmann::json(*entry.depth) : nullptr;
    c["median"] = entry.median;
    c["points"] = entry.per_point.size();
    cells.push_back(std::move(c));
  }
  j["cells"] = std::move(cells);
  j["averages"] = nlohmann::json::array();
  return j;
}

inline std::string to_text(const VarianceReport& report) {
  std::string out = "attribution variance (median over rows)\n";
  out += "depth";
  for (Method m : report.methods) out += std::string("\t") + to_string(m);
  out += "\n";
  for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
    out += detail::depth_label(report.ks[ki]);
    for (std::size_t m = 0; m < report.methods.size(); ++m) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3e", report.medians[ki][m]);
      out += std::string("\t") + buf;
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json to_json(const VarianceReport& report) {
  nlohmann::json j;
  j["metric"] = "attribution_variance";
  nlohmann::json methods = nlohmann::json::array();
  for (Method m : report.methods) methods.push_back(to_string(m));
  j["params"] = {{"methods", methods}};
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
    for (std::size_t m = 0; m < report.methods.size(); ++m) {
      nlohmann::json c;
      c["k"] = report.ks[ki] ? nlohmann::json(*report.ks[ki]) : nullptr;
      c["method"] = to_string(report.methods[m]);
      c["median"] = report.medians[ki][m];
      cells.push_back(std::move(c));
    }
  }
  j["cells"] = std::move(cells);
  j["averages"] = nlohmann::json::array();
  return j;
}

}  // namespace treexplain
