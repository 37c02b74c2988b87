// Command line front end for training regression forests, attributing their
// predictions to features, evaluating attribution quality, and timing the
// attribution methods.
//
// Exit codes: 0 success, 1 runtime failure (bad data, bad model, capacity),
// 2 usage error (unknown flag, missing required argument).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "treexplain/treexplain.hpp"

namespace tx = treexplain;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string data_path;
  std::string schema_path;
  std::string model_path;
  std::string out = ".";
  std::string split = "all";
  std::string method = "both";
  std::uint64_t seed = 42;
  std::size_t subsample = 0;
  unsigned jobs = 1;
};

struct TrainOptions {
  tx::ForestParams params;
};

struct AttributeOptions {
  long long baseline_row = -1;
  long long anomaly_row = -1;
};

struct EvaluateOptions {
  std::string k_list = "all,5,3";
  std::string top_list = "1,3";
  double p = 0.9;
  double bin_width = 0.0;
};

struct BenchOptions {
  std::string depths_list;
  int reps = 3;
  std::size_t limit = 0;
};

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::stringstream stream(text);
  std::string token;
  while (std::getline(stream, token, ',')) {
    token = tx::trim(token);
    if (!token.empty()) tokens.push_back(token);
  }
  return tokens;
}

int parse_positive_int(const std::string& token, const char* what) {
  try {
    size_t used = 0;
    const int value = std::stoi(token, &used);
    if (used != token.size() || value < 1) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw tx::ArgumentError(std::string(what) + ": expected a positive integer, got \"" + token +
                            "\"");
  }
}

// "all,5,3" -> {nullopt, 5, 3}
std::vector<std::optional<int>> parse_depth_list(const std::string& text) {
  std::vector<std::optional<int>> depths;
  for (const auto& token : split_tokens(text)) {
    if (token == "all" || token == "ALL") {
      depths.push_back(std::nullopt);
    } else {
      depths.push_back(parse_positive_int(token, "--k"));
    }
  }
  if (depths.empty()) throw tx::ArgumentError("--k: empty list");
  return depths;
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
  std::vector<int> values;
  for (const auto& token : split_tokens(text)) {
    values.push_back(parse_positive_int(token, what));
  }
  if (values.empty()) throw tx::ArgumentError(std::string(what) + ": empty list");
  return values;
}

std::vector<tx::Method> parse_methods(const std::string& name) {
  if (name == "both") return {tx::Method::Shap, tx::Method::Ti};
  return {tx::method_from_string(name)};
}

tx::Dataset load_input(const CommonOptions& common) {
  const tx::SchemaConfig schema = tx::load_schema(common.schema_path);
  tx::Dataset data = tx::load_table(common.data_path, schema);
  if (common.subsample > 0) {
    data = tx::subsample_unique(data, common.subsample, common.seed);
  }
  return data;
}

// The split partitions are reproducible: the same --seed always carves the
// same rows, so evaluate --split test sees exactly the rows train held out.
tx::Dataset select_split(tx::Dataset data, const std::string& split, std::uint64_t seed) {
  if (split == "all") return data;
  tx::SplitResult parts = tx::split(data, tx::SplitFractions{}, seed);
  if (split == "train") return std::move(parts.train);
  if (split == "val") return std::move(parts.val);
  if (split == "test") return std::move(parts.test);
  throw tx::ArgumentError("--split: expected all, train, val or test, got \"" + split + "\"");
}

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw tx::Error("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  tx::write_text_file(path.string(), text);
  std::cout << "wrote " << path.string() << "\n";
}

void warn_on_empty_cells(const tx::AccuracyReport& report) {
  long long empty = 0;
  for (const auto& row : report.cells) {
    for (const auto& cell : row) {
      if (cell.empty()) ++empty;
    }
  }
  if (empty > 0) {
    std::cerr << "warning: " << empty << " report cell(s) have zero samples (method "
              << tx::to_string(report.method) << ")\n";
  }
}

int run_train(const CommonOptions& common, const TrainOptions& train, const std::string& out) {
  tx::Dataset data = load_input(common);
  tx::SplitResult parts = tx::split(data, tx::SplitFractions{}, common.seed);
  tx::ForestParams params = train.params;
  params.seed = common.seed;
  const tx::Forest forest = tx::fit_forest(parts.train, params, common.jobs);
  std::cout << "trained " << params.n_estimators << " trees (max_depth=" << params.max_depth
            << ") on " << parts.train.n_rows() << " rows\n";
  std::cout << "train_mse=" << tx::format_double(tx::mean_squared_error(forest, parts.train))
            << " val_mse=" << tx::format_double(tx::mean_squared_error(forest, parts.val)) << "\n";
  tx::save_model(forest, out);
  std::cout << "model written to " << out << "\n";
  return 0;
}

std::string attribution_csv(const std::vector<std::string>& feature_names) {
  std::string header = "row,method,bias";
  for (const auto& name : feature_names) header += "," + name;
  return header + "\n";
}

void append_attribution_row(std::string& csv, nlohmann::json& rows, const std::string& row_id,
                            const char* method, double bias, const std::vector<double>& values) {
  csv += row_id;
  csv += ",";
  csv += method;
  csv += "," + tx::format_double(bias);
  for (double v : values) csv += "," + tx::format_double(v);
  csv += "\n";
  rows.push_back({{"row", row_id}, {"method", method}, {"bias", bias}, {"contributions", values}});
}

int run_attribute(const CommonOptions& common, const AttributeOptions& opts) {
  const tx::Forest forest = tx::load_model(common.model_path);
  tx::Dataset data = select_split(load_input(common), common.split, common.seed);
  const auto methods = parse_methods(common.method);
  const fs::path dir = prepare_out_dir(common.out);

  std::string csv = attribution_csv(forest.feature_names);
  nlohmann::json doc;
  doc["features"] = forest.feature_names;
  nlohmann::json rows = nlohmann::json::array();

  const bool delta_mode = opts.baseline_row >= 0 || opts.anomaly_row >= 0;
  if (delta_mode) {
    if (opts.baseline_row < 0 || opts.anomaly_row < 0) {
      throw tx::ArgumentError("delta attribution needs both --baseline-row and --anomaly-row");
    }
    const auto rows_n = static_cast<long long>(data.n_rows());
    if (opts.baseline_row >= rows_n || opts.anomaly_row >= rows_n) {
      throw tx::ArgumentError("row index out of range (split has " + std::to_string(rows_n) +
                              " rows)");
    }
    for (tx::Method method : methods) {
      const tx::Attribution anomaly = tx::attribute(forest, data.row(opts.anomaly_row), method);
      const tx::Attribution baseline = tx::attribute(forest, data.row(opts.baseline_row), method);
      const tx::DeltaAttribution delta = tx::delta_attribution(anomaly, baseline);
      const std::string row_id = "delta:" + std::to_string(opts.anomaly_row) + "-" +
                                 std::to_string(opts.baseline_row);
      append_attribution_row(csv, rows, row_id, tx::to_string(method),
                             anomaly.bias - baseline.bias, delta.values);
    }
  } else {
    for (tx::Method method : methods) {
      const auto attrs = tx::attribute_batch(forest, data, method, common.jobs);
      for (std::size_t r = 0; r < attrs.size(); ++r) {
        append_attribution_row(csv, rows, std::to_string(r), tx::to_string(method), attrs[r].bias,
                               attrs[r].contributions);
      }
    }
  }
  doc["attributions"] = std::move(rows);
  write_file(dir / "attributions.csv", csv);
  write_file(dir / "attributions.json", doc.dump(1) + "\n");
  return 0;
}

int run_evaluate_rbo(const CommonOptions& common, const EvaluateOptions& opts) {
  const tx::Forest forest = tx::load_model(common.model_path);
  const tx::Dataset data = select_split(load_input(common), common.split, common.seed);
  const auto depths = parse_depth_list(opts.k_list);
  const tx::SimilarityReport report = tx::similarity_report(
      forest, data, tx::Method::Shap, tx::Method::Ti, opts.p, depths, common.jobs);
  const fs::path dir = prepare_out_dir(common.out);
  write_file(dir / "rbo.txt", tx::to_text(report));
  write_file(dir / "rbo.json", tx::to_json(report).dump(1) + "\n");
  std::cout << tx::to_text(report);
  return 0;
}

int run_evaluate_variance(const CommonOptions& common, const EvaluateOptions& opts) {
  const tx::Forest forest = tx::load_model(common.model_path);
  const tx::Dataset data = select_split(load_input(common), common.split, common.seed);
  const tx::VarianceReport report = tx::variance_report(
      forest, data, parse_methods(common.method), parse_depth_list(opts.k_list), common.jobs);
  const fs::path dir = prepare_out_dir(common.out);
  write_file(dir / "variance.txt", tx::to_text(report));
  write_file(dir / "variance.json", tx::to_json(report).dump(1) + "\n");
  std::cout << tx::to_text(report);
  return 0;
}

int run_evaluate_accuracy(const CommonOptions& common, const EvaluateOptions& opts,
                          bool implicit) {
  const tx::Forest forest = tx::load_model(common.model_path);
  const tx::Dataset data = select_split(load_input(common), common.split, common.seed);
  const auto ks = parse_int_list(opts.top_list, "--top");

  std::string text;
  nlohmann::json reports = nlohmann::json::array();
  for (tx::Method method : parse_methods(common.method)) {
    tx::AccuracyReport report;
    if (implicit) {
      std::vector<double> widths;
      if (opts.bin_width > 0.0) widths.assign(data.n_covariates(), opts.bin_width);
      const auto templates = tx::build_templates(data, widths);
      report = tx::implicit_accuracy(forest, templates, data, method, ks, common.jobs);
    } else {
      report = tx::explicit_accuracy(forest, data, method, ks, common.jobs);
    }
    warn_on_empty_cells(report);
    text += tx::to_text(report, implicit ? "implicit interventional accuracy"
                                         : "explicit interventional accuracy");
    text += "\n";
    reports.push_back(
        tx::to_json(report, implicit ? "implicit_accuracy" : "explicit_accuracy"));
  }
  const fs::path dir = prepare_out_dir(common.out);
  const std::string stem = implicit ? "implicit" : "explicit";
  write_file(dir / (stem + ".txt"), text);
  write_file(dir / (stem + ".json"), reports.dump(1) + "\n");
  std::cout << text;
  return 0;
}

int run_bench_time(const CommonOptions& common, const BenchOptions& opts) {
  const tx::Forest forest = tx::load_model(common.model_path);
  tx::Dataset data = select_split(load_input(common), common.split, common.seed);
  if (opts.limit > 0 && opts.limit < data.n_rows()) {
    std::vector<std::size_t> rows(opts.limit);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    data = tx::select_rows(data, rows);
  }
  std::vector<tx::TimingRecord> records;
  for (tx::Method method : parse_methods(common.method)) {
    records.push_back(tx::time_attribution(forest, data, method, opts.reps));
  }
  const fs::path dir = prepare_out_dir(common.out);
  write_file(dir / "timing.csv", tx::timing_csv(records));
  for (const auto& r : records) {
    std::cout << tx::to_string(r.method) << ": " << tx::format_double(r.seconds_per_instance)
              << " s/instance over " << r.n_instances << " instances\n";
  }
  return 0;
}

int run_bench_depth_scaling(const CommonOptions& common, const TrainOptions& train,
                            const BenchOptions& opts) {
  tx::Dataset data = load_input(common);
  tx::SplitResult parts = tx::split(data, tx::SplitFractions{}, common.seed);
  tx::Dataset probe = std::move(parts.test);
  if (opts.limit > 0 && opts.limit < probe.n_rows()) {
    std::vector<std::size_t> rows(opts.limit);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    probe = tx::select_rows(probe, rows);
  }
  tx::ForestParams params = train.params;
  params.seed = common.seed;
  const auto depths = parse_int_list(opts.depths_list, "--depths");
  const auto records = tx::depth_scaling(parts.train, probe, depths, params, opts.reps,
                                         common.jobs);
  const fs::path dir = prepare_out_dir(common.out);
  write_file(dir / "depth_scaling.csv", tx::timing_csv(records));

  // Two-column series per method, ready for plotting.
  std::string ti_series, shap_series;
  for (const auto& r : records) {
    std::string& series = r.method == tx::Method::Ti ? ti_series : shap_series;
    series += std::to_string(r.max_depth) + " " + tx::format_double(r.seconds_per_instance) + "\n";
  }
  write_file(dir / "depth_scaling_ti.dat", ti_series);
  write_file(dir / "depth_scaling_shap.dat", shap_series);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "treexplain: regression forests with per-feature attribution.\n"
      "Attribution methods: ti (decision-path contributions) and shap\n"
      "(Shapley values over the tree's training distribution)."};
  app.require_subcommand(1);

  CommonOptions common;
  TrainOptions train;
  AttributeOptions attr_opts;
  EvaluateOptions eval_opts;
  BenchOptions bench_opts;
  std::string train_out = "model.json";

  auto add_data_options = [&](CLI::App* cmd) {
    cmd->add_option("--data", common.data_path, "input table (CSV with header)")->required();
    cmd->add_option("--schema", common.schema_path, "schema JSON describing the table")
        ->required();
    cmd->add_option("--subsample", common.subsample,
                    "reduce to this many rows before splitting (favors unique feature rows)");
    cmd->add_option("--seed", common.seed, "seed for splits, sampling and training")
        ->envname("TREEXPLAIN_SEED");
    cmd->add_option("--jobs", common.jobs, "worker threads (results are independent of this)");
  };
  auto add_model_option = [&](CLI::App* cmd) {
    cmd->add_option("--model", common.model_path, "model JSON produced by train")->required();
  };
  auto add_split_option = [&](CLI::App* cmd, const char* dflt) {
    common.split = dflt;
    cmd->add_option("--split", common.split,
                    std::string("rows to use: all, train, val or test (default ") + dflt + ")");
  };
  auto add_method_option = [&](CLI::App* cmd) {
    cmd->add_option("--method", common.method, "attribution method: ti, shap or both");
  };
  auto add_out_option = [&](CLI::App* cmd) {
    cmd->add_option("--out", common.out, "output directory (default .)");
  };
  auto add_forest_options = [&](CLI::App* cmd) {
    cmd->add_option("--estimators", train.params.n_estimators, "number of trees");
    cmd->add_option("--max-depth", train.params.max_depth, "depth cap per tree, in edges");
    cmd->add_option("--min-leaf", train.params.min_samples_leaf, "minimum samples per leaf");
    cmd->add_option("--bootstrap", train.params.bootstrap,
                    "resample rows with replacement per tree (true/false)");
    cmd->add_option("--feature-fraction", train.params.feature_fraction,
                    "fraction of features considered per split");
  };

  CLI::App* cmd_train = app.add_subcommand("train", "fit a forest on the train partition");
  add_data_options(cmd_train);
  add_forest_options(cmd_train);
  cmd_train->add_option("--out", train_out, "model file to write (default model.json)");

  CLI::App* cmd_attr = app.add_subcommand("attribute", "per-feature attributions for rows");
  add_data_options(cmd_attr);
  add_model_option(cmd_attr);
  add_split_option(cmd_attr, "all");
  add_method_option(cmd_attr);
  add_out_option(cmd_attr);
  cmd_attr->add_option("--baseline-row", attr_opts.baseline_row,
                       "with --anomaly-row: emit the attribution difference instead");
  cmd_attr->add_option("--anomaly-row", attr_opts.anomaly_row,
                       "row whose attribution the baseline is subtracted from");

  CLI::App* cmd_eval = app.add_subcommand("evaluate", "attribution quality metrics");
  cmd_eval->require_subcommand(1);

  CLI::App* cmd_rbo = cmd_eval->add_subcommand("rbo", "ranking agreement between shap and ti");
  add_data_options(cmd_rbo);
  add_model_option(cmd_rbo);
  add_split_option(cmd_rbo, "test");
  add_out_option(cmd_rbo);
  cmd_rbo->add_option("--k", eval_opts.k_list, "ranking depths, e.g. all,5,3");
  cmd_rbo->add_option("--p", eval_opts.p, "rank-biased overlap persistence (0 < p < 1)");

  CLI::App* cmd_var = cmd_eval->add_subcommand("variance", "spread of top attribution magnitudes");
  add_data_options(cmd_var);
  add_model_option(cmd_var);
  add_split_option(cmd_var, "test");
  add_method_option(cmd_var);
  add_out_option(cmd_var);
  cmd_var->add_option("--k", eval_opts.k_list, "magnitude depths, e.g. all,5,3");

  CLI::App* cmd_impl = cmd_eval->add_subcommand(
      "implicit", "accuracy on observed single-treatment differences");
  add_data_options(cmd_impl);
  add_model_option(cmd_impl);
  add_split_option(cmd_impl, "test");
  add_method_option(cmd_impl);
  add_out_option(cmd_impl);
  cmd_impl->add_option("--top", eval_opts.top_list, "hit depths, e.g. 1,3");
  cmd_impl->add_option("--bin-width", eval_opts.bin_width,
                       "covariate bin width for template grouping (0 = exact match)");

  CLI::App* cmd_expl = cmd_eval->add_subcommand(
      "explicit", "accuracy on constructed single-treatment perturbations");
  add_data_options(cmd_expl);
  add_model_option(cmd_expl);
  add_split_option(cmd_expl, "test");
  add_method_option(cmd_expl);
  add_out_option(cmd_expl);
  cmd_expl->add_option("--top", eval_opts.top_list, "hit depths, e.g. 1,3");

  CLI::App* cmd_bench = app.add_subcommand("bench", "attribution timing");
  cmd_bench->require_subcommand(1);

  CLI::App* cmd_time = cmd_bench->add_subcommand("time", "time attribution on a fixed model");
  add_data_options(cmd_time);
  add_model_option(cmd_time);
  add_split_option(cmd_time, "all");
  add_method_option(cmd_time);
  add_out_option(cmd_time);
  cmd_time->add_option("--reps", bench_opts.reps, "timing repetitions; fastest wins");
  cmd_time->add_option("--limit", bench_opts.limit, "cap the number of timed instances");

  CLI::App* cmd_depth = cmd_bench->add_subcommand(
      "depth-scaling", "refit at several depth caps and time both methods");
  add_data_options(cmd_depth);
  add_forest_options(cmd_depth);
  add_out_option(cmd_depth);
  cmd_depth->add_option("--depths", bench_opts.depths_list, "ascending depth caps, e.g. 5,10,15,20")
      ->required();
  cmd_depth->add_option("--reps", bench_opts.reps, "timing repetitions; fastest wins");
  cmd_depth->add_option("--limit", bench_opts.limit, "cap the number of probe instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(cmd_train)) return run_train(common, train, train_out);
    if (app.got_subcommand(cmd_attr)) return run_attribute(common, attr_opts);
    if (cmd_eval->got_subcommand(cmd_rbo)) return run_evaluate_rbo(common, eval_opts);
    if (cmd_eval->got_subcommand(cmd_var)) return run_evaluate_variance(common, eval_opts);
    if (cmd_eval->got_subcommand(cmd_impl)) return run_evaluate_accuracy(common, eval_opts, true);
    if (cmd_eval->got_subcommand(cmd_expl)) return run_evaluate_accuracy(common, eval_opts, false);
    if (cmd_bench->got_subcommand(cmd_time)) return run_bench_time(common, bench_opts);
    if (cmd_bench->got_subcommand(cmd_depth)) {
      return run_bench_depth_scaling(common, train, bench_opts);
    }
    std::cerr << "error: no subcommand selected\n";
    return 2;
  } catch (const tx::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
