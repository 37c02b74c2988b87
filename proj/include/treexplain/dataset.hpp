#pragma once

// Tabular data handling: schema-driven CSV ingestion, deterministic
// subsampling and splitting, covariate templates, and a synthetic generator
// with known ground-truth treatment effects.
//
// Feature layout is always covariates first (schema order), then treatment
// columns (schema order). Treatments hold small non-negative integer levels
// stored as doubles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "treexplain/errors.hpp"
#include "treexplain/io.hpp"

namespace treexplain {

struct SchemaConfig {
  std::vector<std::string> covariate_columns;
  std::vector<std::string> treatment_columns;
  std::string target_column;
  bool log_transform_target = false;
  int treatment_cardinality = 3;

  std::size_t n_features() const {
    return covariate_columns.size() + treatment_columns.size();
  }

  void validate() const {
    if (target_column.empty()) throw SchemaError("schema: target column name is empty");
    if (covariate_columns.empty() && treatment_columns.empty()) {
      throw SchemaError("schema: no covariate or treatment columns declared");
    }
    if (treatment_cardinality < 2) {
      throw SchemaError("schema: treatment_cardinality must be at least 2");
    }
    std::unordered_set<std::string> seen;
    auto add = [&](const std::string& name, const char* role) {
      if (name.empty()) throw SchemaError(std::string("schema: empty ") + role + " column name");
      if (!seen.insert(name).second) {
        throw SchemaError("schema: column declared twice: " + name);
      }
    };
    for (const auto& c : covariate_columns) add(c, "covariate");
    for (const auto& t : treatment_columns) add(t, "treatment");
    add(target_column, "target");
  }
};

// Schema files are JSON objects:
//   {"covariates": [...], "treatments": [...], "target": "...",
//    "log_target": bool, "treatment_cardinality": int}
// log_target defaults to false, treatment_cardinality to 3.
inline SchemaConfig load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema file is not valid JSON: " + path + ": " + e.what());
  }
  SchemaConfig schema;
  try {
    if (!doc.is_object()) throw SchemaError("schema root must be a JSON object");
    for (const char* key : {"covariates", "treatments", "target"}) {
      if (!doc.contains(key)) {
        throw SchemaError(std::string("schema: missing required key \"") + key + "\"");
      }
    }
    schema.covariate_columns = doc.at("covariates").get<std::vector<std::string>>();
    schema.treatment_columns = doc.at("treatments").get<std::vector<std::string>>();
    schema.target_column = doc.at("target").get<std::string>();
    schema.log_transform_target = doc.value("log_target", false);
    schema.treatment_cardinality = doc.value("treatment_cardinality", 3);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("schema: wrong value type: ") + e.what());
  }
  schema.validate();
  return schema;
}

// Row-major table of features plus a target vector. Instances are built by
// the factory functions below and treated as immutable afterwards.
struct Dataset {
  SchemaConfig schema;
  std::vector<std::string> feature_names;  // covariates then treatments
  std::vector<double> features;            // n_rows * n_features, row-major
  std::vector<double> targets;

  std::size_t n_rows() const { return targets.size(); }
  std::size_t n_features() const { return feature_names.size(); }
  std::size_t n_covariates() const { return schema.covariate_columns.size(); }
  std::size_t n_treatments() const { return schema.treatment_columns.size(); }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(features.data() + r * n_features(), n_features());
  }
  double feature(std::size_t r, std::size_t c) const {
    return features[r * n_features() + c];
  }
  // Feature column indices of the treatment variables (they follow the
  // covariates in the layout).
  std::vector<std::size_t> treatment_feature_indices() const {
    std::vector<std::size_t> idx(n_treatments());
    std::iota(idx.begin(), idx.end(), n_covariates());
    return idx;
  }
};

// Rows grouped by (possibly binned) covariate values. member_indices are row
// indices into the dataset the templates were built from, in row order.
struct Template {
  std::vector<double> covariate_key;
  std::vector<std::size_t> member_indices;
};

inline Dataset select_rows(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out;
  out.schema = data.schema;
  out.feature_names = data.feature_names;
  out.features.reserve(rows.size() * data.n_features());
  out.targets.reserve(rows.size());
  for (std::size_t r : rows) {
    auto row = data.row(r);
    out.features.insert(out.features.end(), row.begin(), row.end());
    out.targets.push_back(data.targets[r]);
  }
  return out;
}

namespace detail {

inline std::string cell_context(std::size_t row, const std::string& column) {
  // Row numbers in messages are 1-based data rows (header excluded).
  return "row " + std::to_string(row + 1) + ", column \"" + column + "\"";
}

}  // namespace detail

// Loads a comma-separated table with a header row against a schema. Only the
// schema's columns are ingested; extra columns are ignored. The target is
// natural-log transformed when the schema asks for it. Errors:
//   SchemaError      missing or duplicated schema column in the header
//   ParseError       unreadable file, short row, or non-numeric cell
//   ValidationError  non-finite value, non-positive target under log
//                    transform, treatment level outside its cardinality
inline Dataset load_table(const std::string& path, const SchemaConfig& schema) {
  schema.validate();
  std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw ParseError("empty table: " + path);

  std::vector<std::string> header = split_fields(lines[0]);
  for (auto& h : header) h = trim(h);

  auto column_index = [&](const std::string& name) {
    std::size_t found = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) {
        if (found != header.size()) {
          throw SchemaError("table header lists column \"" + name + "\" twice");
        }
        found = i;
      }
    }
    if (found == header.size()) {
      throw SchemaError("table is missing schema column \"" + name + "\"");
    }
    return found;
  };

  std::vector<std::size_t> feature_cols;
  Dataset data;
  data.schema = schema;
  for (const auto& name : schema.covariate_columns) {
    feature_cols.push_back(column_index(name));
    data.feature_names.push_back(name);
  }
  for (const auto& name : schema.treatment_columns) {
    feature_cols.push_back(column_index(name));
    data.feature_names.push_back(name);
  }
  std::size_t target_col = column_index(schema.target_column);

  const std::size_t n_features = feature_cols.size();
  const std::size_t n_covariates = schema.covariate_columns.size();
  std::vector<std::string> fields;
  for (std::size_t line_no = 1; line_no < lines.size(); ++line_no) {
    if (lines[line_no].empty()) continue;
    std::vector<std::string> cells = split_fields(lines[line_no]);
    const std::size_t row = data.targets.size();
    if (cells.size() < header.size()) {
      throw ParseError("row " + std::to_string(row + 1) + " has " +
                       std::to_string(cells.size()) + " cells, header has " +
                       std::to_string(header.size()));
    }
    auto numeric = [&](std::size_t col, const std::string& name) {
      auto value = parse_double(cells[col]);
      if (!value) {
        throw ParseError("non-numeric cell at " + detail::cell_context(row, name) +
                         ": \"" + trim(cells[col]) + "\"");
      }
      if (!std::isfinite(*value)) {
        throw ValidationError("non-finite value at " + detail::cell_context(row, name));
      }
      return *value;
    };
    for (std::size_t f = 0; f < n_features; ++f) {
      double value = numeric(feature_cols[f], data.feature_names[f]);
      if (f >= n_covariates) {
        double level = std::round(value);
        if (value != level || level < 0 ||
            level >= schema.treatment_cardinality) {
          throw ValidationError(
              "treatment level out of range at " +
              detail::cell_context(row, data.feature_names[f]) + ": expected integer in [0, " +
              std::to_string(schema.treatment_cardinality - 1) + "], got " + format_double(value));
        }
      }
      data.features.push_back(value);
    }
    double target = numeric(target_col, schema.target_column);
    if (schema.log_transform_target) {
      if (target <= 0.0) {
        throw ValidationError("target must be positive for log transform at " +
                              detail::cell_context(row, schema.target_column));
      }
      target = std::log(target);
    }
    data.targets.push_back(target);
  }
  if (data.targets.empty()) throw ValidationError("table has no data rows: " + path);
  return data;
}

// Writes the stored values back out as CSV (feature columns then target).
// Values are formatted with shortest round-trip precision, so reloading with
// a schema whose log_target is false reproduces the stored doubles exactly.
inline void save_table(const Dataset& data, const std::string& path) {
  std::ostringstream out;
  for (const auto& name : data.feature_names) out << name << ',';
  out << data.schema.target_column << '\n';
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    auto row = data.row(r);
    for (double v : row) out << format_double(v) << ',';
    out << format_double(data.targets[r]) << '\n';
  }
  write_text_file(path, out.str());
}

namespace detail {

// Fisher-Yates selection of `count` elements from `pool` without
// replacement. Only the first `count` slots are shuffled.
inline std::vector<std::size_t> sample_without_replacement(
    std::vector<std::size_t> pool, std::size_t count, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace detail

// Reduces the table to `target_rows` rows. Rows whose feature vectors are
// exact duplicates of an earlier row are dropped first; unique rows are kept
// (sampled down if they alone exceed the budget) and the remaining budget is
// filled by seeded sampling from the dropped duplicates. Output preserves
// original row order.
inline Dataset subsample_unique(const Dataset& data, std::size_t target_rows,
                                std::uint64_t seed) {
  if (target_rows == 0) throw ArgumentError("subsample: target_rows must be positive");
  if (target_rows > data.n_rows()) {
    throw ArgumentError("subsample: target_rows " + std::to_string(target_rows) +
                        " exceeds table size " + std::to_string(data.n_rows()));
  }
  std::map<std::vector<double>, std::size_t> first_seen;
  std::vector<std::size_t> uniques;
  std::vector<std::size_t> duplicates;
  std::vector<double> key;
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    auto row = data.row(r);
    key.assign(row.begin(), row.end());
    if (first_seen.emplace(key, r).second) {
      uniques.push_back(r);
    } else {
      duplicates.push_back(r);
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  if (uniques.size() >= target_rows) {
    chosen = detail::sample_without_replacement(uniques, target_rows, rng);
  } else {
    chosen = uniques;
    std::size_t extra = target_rows - uniques.size();
    auto filler = detail::sample_without_replacement(duplicates, extra, rng);
    chosen.insert(chosen.end(), filler.begin(), filler.end());
  }
  std::sort(chosen.begin(), chosen.end());
  return select_rows(data, chosen);
}

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Seeded shuffle followed by contiguous partition. Validation and test take
// floor(n * fraction) rows each; the remainder goes to train.
inline SplitResult split(const Dataset& data, const SplitFractions& fractions,
                         std::uint64_t seed) {
  for (double f : {fractions.train, fractions.val, fractions.test}) {
    if (!(f > 0.0)) throw ArgumentError("split: every fraction must be positive");
  }
  double total = fractions.train + fractions.val + fractions.test;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ArgumentError("split: fractions must sum to 1, got " + format_double(total));
  }
  const std::size_t n = data.n_rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_val = static_cast<std::size_t>(n * fractions.val);
  const auto n_test = static_cast<std::size_t>(n * fractions.test);
  if (n_val + n_test >= n) {
    throw ArgumentError("split: table too small for the requested fractions");
  }
  const std::size_t n_train = n - n_val - n_test;

  std::span<const std::size_t> view(order);
  SplitResult result;
  result.train = select_rows(data, view.subspan(0, n_train));
  result.val = select_rows(data, view.subspan(n_train, n_val));
  result.test = select_rows(data, view.subspan(n_train + n_val, n_test));
  return result;
}

// Groups rows by covariate values. bin_widths may be empty (exact grouping)
// or give one width per covariate; a width of 0 keeps that covariate exact,
// otherwise the key component is floor(value / width). Every row lands in
// exactly one template; templates appear in order of their first member.
inline std::vector<Template> build_templates(const Dataset& data,
                                             const std::vector<double>& bin_widths = {}) {
  const std::size_t n_cov = data.n_covariates();
  if (!bin_widths.empty() && bin_widths.size() != n_cov) {
    throw ArgumentError("build_templates: expected " + std::to_string(n_cov) +
                        " bin widths, got " + std::to_string(bin_widths.size()));
  }
  for (double w : bin_widths) {
    if (w < 0.0 || !std::isfinite(w)) {
      throw ArgumentError("build_templates: bin widths must be finite and non-negative");
    }
  }
  std::vector<Template> templates;
  std::map<std::vector<double>, std::size_t> index;
  std::vector<double> key(n_cov);
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    for (std::size_t c = 0; c < n_cov; ++c) {
      double v = data.feature(r, c);
      double w = bin_widths.empty() ? 0.0 : bin_widths[c];
      key[c] = w > 0.0 ? std::floor(v / w) : v;
    }
    auto [it, inserted] = index.emplace(key, templates.size());
    if (inserted) templates.push_back(Template{key, {}});
    templates[it->second].member_indices.push_back(r);
  }
  return templates;
}

struct SynthesisParams {
  std::size_t n_rows = 1000;
  std::size_t n_covariates = 3;
  std::size_t n_treatments = 3;
  std::vector<double> effect_weights;  // one per treatment
  double noise_sd = 0.0;
  int treatment_cardinality = 3;
  std::uint64_t seed = 42;
};

namespace detail {

// Fixed smooth covariate effect used by the generator. Bounded and gently
// sloped so treatment effects dominate locally.
inline double covariate_effect(std::span<const double> covariates) {
  double sum = 0.0;
  for (double c : covariates) sum += std::sin(2.0 * 3.14159265358979323846 * c);
  return 0.2 * sum;
}

}  // namespace detail

// Draws covariates uniformly on [0, 1], treatment levels uniformly from
// {0, ..., cardinality-1}, and sets
//   target = sum_j weight_j * treatment_j + g(covariates) + Normal(0, sd)
// where g is a fixed smooth function (identically zero when there are no
// covariates). The same seed reproduces the same table.
inline Dataset synthesize(const SynthesisParams& params) {
  if (params.n_rows == 0) throw ArgumentError("synthesize: n_rows must be positive");
  if (params.n_treatments == 0) throw ArgumentError("synthesize: need at least one treatment");
  if (params.effect_weights.size() != params.n_treatments) {
    throw ArgumentError("synthesize: expected " + std::to_string(params.n_treatments) +
                        " effect weights, got " + std::to_string(params.effect_weights.size()));
  }
  if (params.noise_sd < 0.0) throw ArgumentError("synthesize: noise_sd must be non-negative");
  if (params.treatment_cardinality < 2) {
    throw ArgumentError("synthesize: treatment_cardinality must be at least 2");
  }

  Dataset data;
  for (std::size_t c = 0; c < params.n_covariates; ++c) {
    data.schema.covariate_columns.push_back("cov" + std::to_string(c));
  }
  for (std::size_t t = 0; t < params.n_treatments; ++t) {
    data.schema.treatment_columns.push_back("trt" + std::to_string(t));
  }
  data.schema.target_column = "target";
  data.schema.treatment_cardinality = params.treatment_cardinality;
  data.feature_names = data.schema.covariate_columns;
  data.feature_names.insert(data.feature_names.end(),
                            data.schema.treatment_columns.begin(),
                            data.schema.treatment_columns.end());

  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> level(0, params.treatment_cardinality - 1);
  std::normal_distribution<double> noise(0.0, params.noise_sd > 0.0 ? params.noise_sd : 1.0);

  const std::size_t n_features = params.n_covariates + params.n_treatments;
  data.features.reserve(params.n_rows * n_features);
  data.targets.reserve(params.n_rows);
  for (std::size_t r = 0; r < params.n_rows; ++r) {
    for (std::size_t c = 0; c < params.n_covariates; ++c) {
      data.features.push_back(unit(rng));
    }
    double target = 0.0;
    for (std::size_t t = 0; t < params.n_treatments; ++t) {
      double lv = static_cast<double>(level(rng));
      data.features.push_back(lv);
      target += params.effect_weights[t] * lv;
    }
    std::span<const double> covs(data.features.data() + r * n_features, params.n_covariates);
    target += detail::covariate_effect(covs);
    if (params.noise_sd > 0.0) target += noise(rng);
    data.targets.push_back(target);
  }
  return data;
}

}  // namespace treexplain
