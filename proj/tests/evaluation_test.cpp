#include "treexplain/evaluation.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "test_support.hpp"
#include "treexplain/attribution.hpp"
#include "treexplain/dataset.hpp"
#include "treexplain/errors.hpp"
#include "treexplain/forest.hpp"

namespace tx = treexplain;

namespace {

tx::RankedList ranking(std::vector<int> features) {
  tx::RankedList r;
  r.features = std::move(features);
  r.magnitudes.assign(r.features.size(), 0.0);
  return r;
}

// Forest over features (c0, t0, t1) that reacts to each treatment through its
// own tree and ignores the covariate entirely.
tx::Forest treatment_sensitive_forest() {
  using tx::NodeKind;
  tx::RegressionTree a;
  a.nodes.resize(3);
  a.nodes[0] = {NodeKind::Internal, 1, 0.5, 1, 2, 5.0, 4};
  a.nodes[1] = {NodeKind::Leaf, -1, 0.0, -1, -1, 0.0, 2};
  a.nodes[2] = {NodeKind::Leaf, -1, 0.0, -1, -1, 10.0, 2};
  a.depth = 1;
  tx::RegressionTree b;
  b.nodes.resize(3);
  b.nodes[0] = {NodeKind::Internal, 2, 0.5, 1, 2, 2.0, 4};
  b.nodes[1] = {NodeKind::Leaf, -1, 0.0, -1, -1, 0.0, 2};
  b.nodes[2] = {NodeKind::Leaf, -1, 0.0, -1, -1, 4.0, 2};
  b.depth = 1;
  return txtest::make_forest({a, b}, 3);
}

}  // namespace

TEST(Rbo, IdenticalRankingsScoreOne) {
  const tx::RankedList a = ranking({3, 1, 0, 2});
  EXPECT_NEAR(tx::rbo(a, a), 1.0, 1e-12);
  EXPECT_NEAR(tx::rbo(a, a, {.p = 0.5, .depth = 2}), 1.0, 1e-12);
}

TEST(Rbo, WorkedThreeFeatureExample) {
  // Prefix overlaps for [a,b,c] vs [b,a,c]: 0/1, 2/2, 3/3. With p = 0.9 the
  // extrapolated score is 0.729 + (0.1/0.9)(0 + 0.81 + 0.729) = 0.900.
  const tx::RankedList a = ranking({0, 1, 2});
  const tx::RankedList b = ranking({1, 0, 2});
  EXPECT_NEAR(tx::rbo(a, b, {.p = 0.9, .depth = 3}), 0.900, 1e-12);
  EXPECT_NEAR(tx::rbo(a, b), 0.900, 1e-12);  // full length defaults to k = n
}

TEST(Rbo, WorkedFourFeatureExample) {
  // [0,1,2,3] vs [2,3,0,1] at p = 0.5: overlaps 0, 0, 2, 4 give
  // (4/4)(1/16) + (0.5/0.5)((2/3)(1/8) + (4/4)(1/16)) = 5/24.
  const tx::RankedList a = ranking({0, 1, 2, 3});
  const tx::RankedList b = ranking({2, 3, 0, 1});
  EXPECT_NEAR(tx::rbo(a, b, {.p = 0.5}), 5.0 / 24.0, 1e-12);
}

TEST(Rbo, SymmetricAndBounded) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 8);
    std::vector<int> pa(n), pb(n);
    std::iota(pa.begin(), pa.end(), 0);
    std::iota(pb.begin(), pb.end(), 0);
    std::shuffle(pa.begin(), pa.end(), rng);
    std::shuffle(pb.begin(), pb.end(), rng);
    const tx::RankedList a = ranking(pa);
    const tx::RankedList b = ranking(pb);
    const int depth = 1 + static_cast<int>(rng() % n);
    const tx::RboParams params{.p = 0.9, .depth = depth};
    const double ab = tx::rbo(a, b, params);
    EXPECT_DOUBLE_EQ(ab, tx::rbo(b, a, params));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0 + 1e-12);
  }
}

TEST(Rbo, RejectsMalformedInput) {
  const tx::RankedList a = ranking({0, 1, 2});
  const tx::RankedList b = ranking({2, 1, 0});
  EXPECT_THROW(tx::rbo(a, b, {.p = 0.0}), tx::ArgumentError);
  EXPECT_THROW(tx::rbo(a, b, {.p = 1.0}), tx::ArgumentError);
  EXPECT_THROW(tx::rbo(a, b, {.p = -0.2}), tx::ArgumentError);
  EXPECT_THROW(tx::rbo(a, b, {.p = 0.9, .depth = 0}), tx::ArgumentError);
  EXPECT_THROW(tx::rbo(a, b, {.p = 0.9, .depth = 4}), tx::ArgumentError);
  EXPECT_THROW(tx::rbo(a, ranking({0, 1}), {}), tx::ArgumentError);
  EXPECT_THROW(tx::rbo(a, ranking({0, 1, 5}), {}), tx::ArgumentError);  // different universe
  EXPECT_THROW(tx::rbo(ranking({0, 1, 1}), ranking({0, 1, 1}), {}), tx::ArgumentError);
  EXPECT_THROW(tx::rbo(ranking({}), ranking({}), {}), tx::ArgumentError);
}

TEST(LowerMedian, TakesLowerOfTwoMiddles) {
  EXPECT_DOUBLE_EQ(tx::detail::lower_median({0.4, 0.8}), 0.4);
  EXPECT_DOUBLE_EQ(tx::detail::lower_median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(tx::detail::lower_median({7.0}), 7.0);
  EXPECT_DOUBLE_EQ(tx::detail::lower_median({4.0, 1.0, 3.0, 2.0}), 2.0);
  EXPECT_THROW(tx::detail::lower_median({}), tx::ArgumentError);
}

TEST(TopMagnitudeVariance, PopulationVarianceOfLargestMagnitudes) {
  const std::vector<double> values{1.0, -3.0, 5.0};
  EXPECT_NEAR(tx::top_magnitude_variance(values), 8.0 / 3.0, 1e-12);
  EXPECT_NEAR(tx::top_magnitude_variance(values, 3), 8.0 / 3.0, 1e-12);
  EXPECT_NEAR(tx::top_magnitude_variance(values, 2), 1.0, 1e-12);  // {5, 3}
  EXPECT_DOUBLE_EQ(tx::top_magnitude_variance(values, 1), 0.0);
  EXPECT_THROW(tx::top_magnitude_variance(values, 0), tx::ArgumentError);
  EXPECT_THROW(tx::top_magnitude_variance(values, 4), tx::ArgumentError);
  EXPECT_THROW(tx::top_magnitude_variance(std::vector<double>{}), tx::ArgumentError);
}

TEST(AttributionVariance, MedianOverRows) {
  // Decision-path magnitudes: row (0.7, 0.8) gives (1.5, 1.0), variance
  // 0.0625; row (0.2, 0.9) gives (1.5, 0), variance 0.5625. Lower median of
  // the two is 0.0625.
  const tx::Forest forest = txtest::two_split_forest();
  const tx::Dataset data =
      txtest::make_dataset(2, {{0.7, 0.8}, {0.2, 0.9}}, {5.0, 1.0});
  EXPECT_NEAR(tx::attribution_variance(forest, data, tx::Method::Ti), 0.0625, 1e-12);
  EXPECT_THROW(tx::attribution_variance(forest, data, tx::Method::Ti, 3), tx::ArgumentError);
  const tx::Dataset empty = txtest::make_dataset(2, {}, {});
  EXPECT_THROW(tx::attribution_variance(forest, empty, tx::Method::Ti), tx::ArgumentError);
}

TEST(VarianceReport, DropsOversizedDepthsAndTabulates) {
  const tx::Forest forest = txtest::two_split_forest();
  const tx::Dataset data =
      txtest::make_dataset(2, {{0.7, 0.8}, {0.2, 0.9}}, {5.0, 1.0});
  const tx::VarianceReport report =
      tx::variance_report(forest, data, {tx::Method::Shap, tx::Method::Ti});
  ASSERT_EQ(report.ks.size(), 1u);  // depths 5 and 3 exceed the 2 features
  EXPECT_FALSE(report.ks[0].has_value());
  ASSERT_EQ(report.medians.size(), 1u);
  ASSERT_EQ(report.medians[0].size(), 2u);
  EXPECT_NEAR(report.medians[0][1], 0.0625, 1e-12);

  const std::string text = tx::to_text(report);
  EXPECT_NE(text.find("attribution variance"), std::string::npos);
  EXPECT_NE(text.find("all"), std::string::npos);
  const nlohmann::json j = tx::to_json(report);
  EXPECT_EQ(j["metric"], "attribution_variance");
  ASSERT_EQ(j["cells"].size(), 2u);
  EXPECT_TRUE(j["cells"][0]["k"].is_null());
  EXPECT_EQ(j["cells"][1]["method"], "ti");
}

TEST(SimilarityReport, SelfComparisonIsPerfect) {
  std::mt19937_64 rng(32);
  const tx::Forest forest = txtest::random_forest(rng, 4, {.n_features = 6, .max_depth = 5});
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < 8; ++r) rows.push_back(txtest::random_point(rng, 6));
  const tx::Dataset data = txtest::make_dataset(6, rows, std::vector<double>(8, 0.0));

  const tx::SimilarityReport report =
      tx::similarity_report(forest, data, tx::Method::Ti, tx::Method::Ti);
  ASSERT_EQ(report.entries.size(), 3u);  // all, top-5, top-3 all fit 6 features
  for (const auto& entry : report.entries) {
    EXPECT_NEAR(entry.median, 1.0, 1e-12);
    for (double v : entry.per_point) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(SimilarityReport, ComparesMethodsAndRenders) {
  std::mt19937_64 rng(33);
  const tx::Forest forest = txtest::random_forest(rng, 6, {.n_features = 4, .max_depth = 5});
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < 9; ++r) rows.push_back(txtest::random_point(rng, 4));
  const tx::Dataset data = txtest::make_dataset(4, rows, std::vector<double>(9, 0.0));

  const tx::SimilarityReport report =
      tx::similarity_report(forest, data, tx::Method::Shap, tx::Method::Ti);
  ASSERT_EQ(report.entries.size(), 2u);  // top-5 dropped for 4 features
  EXPECT_FALSE(report.entries[0].depth.has_value());
  EXPECT_EQ(report.entries[1].depth, std::optional<int>(3));
  for (const auto& entry : report.entries) {
    EXPECT_GE(entry.median, 0.0);
    EXPECT_LE(entry.median, 1.0 + 1e-12);
    EXPECT_EQ(entry.per_point.size(), 9u);
  }

  const std::string text = tx::to_text(report);
  EXPECT_NE(text.find("shap vs ti"), std::string::npos);
  EXPECT_NE(text.find("p=0.90"), std::string::npos);
  const nlohmann::json j = tx::to_json(report);
  EXPECT_EQ(j["metric"], "rbo_similarity");
  EXPECT_EQ(j["params"]["method_a"], "shap");
  ASSERT_EQ(j["cells"].size(), 2u);
  EXPECT_TRUE(j["cells"][0]["depth"].is_null());
  EXPECT_EQ(j["cells"][1]["depth"], 3);
  EXPECT_EQ(j["cells"][0]["points"], 9);
}

TEST(AttributeBatch, MatchesSingleCallsAndIgnoresJobCount) {
  std::mt19937_64 rng(34);
  const tx::Forest forest = txtest::random_forest(rng, 5, {.n_features = 3, .max_depth = 5});
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < 7; ++r) rows.push_back(txtest::random_point(rng, 3));
  const tx::Dataset data = txtest::make_dataset(3, rows, std::vector<double>(7, 0.0));

  const auto serial = tx::attribute_batch(forest, data, tx::Method::Shap, 1);
  const auto threaded = tx::attribute_batch(forest, data, tx::Method::Shap, 4);
  ASSERT_EQ(serial.size(), 7u);
  for (std::size_t r = 0; r < serial.size(); ++r) {
    const tx::Attribution one = tx::shap_attribute(forest, data.row(r));
    EXPECT_EQ(serial[r].bias, one.bias);
    EXPECT_EQ(serial[r].contributions, one.contributions);
    EXPECT_EQ(threaded[r].contributions, one.contributions);
  }
}

TEST(ImplicitAccuracy, CountsOnlySingleTreatmentPairs) {
  // Template members: rows 0/1 differ in t0 only, rows 1/2 differ in t1 only,
  // rows 0/2 differ in both treatments and must not become a pair. Row 3 sits
  // in a different template and pairs with nobody.
  const tx::Dataset data = txtest::make_dataset(3,
                                                {{1.0, 0.0, 0.0},
                                                 {1.0, 1.0, 0.0},
                                                 {1.0, 1.0, 1.0},
                                                 {2.0, 0.0, 0.0}},
                                                {1.0, 5.0, 3.0, 0.0},
                                                /*n_treatments=*/2);
  const std::vector<tx::Template> templates = tx::build_templates(data);
  ASSERT_EQ(templates.size(), 2u);

  const tx::Forest forest = treatment_sensitive_forest();
  const tx::AccuracyReport report =
      tx::implicit_accuracy(forest, templates, data, tx::Method::Ti);
  ASSERT_EQ(report.treatments.size(), 2u);
  ASSERT_EQ(report.ks, (std::vector<int>{1, 3}));

  EXPECT_EQ(report.cells[0][0].samples, 1);  // t0: rows 0/1
  EXPECT_EQ(report.cells[0][0].hits, 1);
  EXPECT_EQ(report.cells[1][0].samples, 1);  // t1: rows 1/2
  EXPECT_EQ(report.cells[1][0].hits, 1);
  EXPECT_FALSE(report.has_empty_cells());
  EXPECT_DOUBLE_EQ(*report.average(0), 1.0);

  // Same outcome for the conditional-expectation method on this forest.
  const tx::AccuracyReport shap =
      tx::implicit_accuracy(forest, templates, data, tx::Method::Shap);
  EXPECT_EQ(shap.cells[0][0].hits, 1);
  EXPECT_EQ(shap.cells[1][0].hits, 1);
}

TEST(ImplicitAccuracy, NoQualifyingPairsYieldsEmptyCells) {
  // Both rows change two treatments at once.
  const tx::Dataset data = txtest::make_dataset(
      3, {{1.0, 0.0, 0.0}, {1.0, 1.0, 1.0}}, {1.0, 2.0}, /*n_treatments=*/2);
  const std::vector<tx::Template> templates = tx::build_templates(data);
  const tx::AccuracyReport report =
      tx::implicit_accuracy(treatment_sensitive_forest(), templates, data, tx::Method::Ti);
  EXPECT_TRUE(report.has_empty_cells());
  for (const auto& row : report.cells) {
    for (const auto& cell : row) EXPECT_EQ(cell.samples, 0);
  }
  EXPECT_FALSE(report.average(0).has_value());
  const std::string text = tx::to_text(report, "implicit accuracy");
  EXPECT_NE(text.find("n/a (0 samples)"), std::string::npos);
  const nlohmann::json j = tx::to_json(report, "implicit_accuracy");
  EXPECT_TRUE(j["cells"][0]["rate"].is_null());
  EXPECT_TRUE(j["averages"][0]["rate"].is_null());
}

TEST(ImplicitAccuracy, TreatmentBlindModelNeverHitsTopOne) {
  // The forest splits only on the covariate, so paired rows with identical
  // covariates produce identical attributions. The all-zero difference ranks
  // features by index and the covariate occupies the top slot.
  using tx::NodeKind;
  tx::RegressionTree tree;
  tree.nodes.resize(3);
  tree.nodes[0] = {NodeKind::Internal, 0, 1.5, 1, 2, 1.0, 4};
  tree.nodes[1] = {NodeKind::Leaf, -1, 0.0, -1, -1, 0.0, 2};
  tree.nodes[2] = {NodeKind::Leaf, -1, 0.0, -1, -1, 2.0, 2};
  tree.depth = 1;
  const tx::Forest forest = txtest::make_forest({tree}, 2);

  const tx::Dataset data = txtest::make_dataset(
      2, {{1.0, 0.0}, {1.0, 1.0}, {1.0, 2.0}}, {1.0, 2.0, 3.0}, /*n_treatments=*/1);
  const tx::AccuracyReport report = tx::implicit_accuracy(
      forest, tx::build_templates(data), data, tx::Method::Ti, {1, 2});
  EXPECT_EQ(report.cells[0][0].samples, 3);
  EXPECT_EQ(report.cells[0][0].hits, 0);
  EXPECT_EQ(report.cells[0][1].hits, 3);  // top-2 of 2 features always hits
}

TEST(ImplicitAccuracy, ValidatesArguments) {
  const tx::Dataset data = txtest::make_dataset(
      2, {{1.0, 0.0}, {1.0, 1.0}}, {1.0, 2.0}, /*n_treatments=*/1);
  const tx::Forest forest = treatment_sensitive_forest();
  tx::Template bad;
  bad.covariate_key = {1.0};
  bad.member_indices = {0, 9};
  EXPECT_THROW(tx::implicit_accuracy(forest, {bad}, data, tx::Method::Ti), tx::ArgumentError);
  EXPECT_THROW(
      tx::implicit_accuracy(forest, tx::build_templates(data), data, tx::Method::Ti, {}),
      tx::ArgumentError);
  EXPECT_THROW(
      tx::implicit_accuracy(forest, tx::build_templates(data), data, tx::Method::Ti, {0}),
      tx::ArgumentError);
}

TEST(ImplicitAccuracy, RecoversTreatmentsOnLearnedForest) {
  const tx::Dataset data = tx::synthesize({.n_rows = 300,
                                           .n_covariates = 2,
                                           .n_treatments = 2,
                                           .effect_weights = {1.0, 0.6},
                                           .noise_sd = 0.0,
                                           .seed = 35});
  tx::ForestParams params;
  params.n_estimators = 30;
  params.max_depth = 8;
  params.seed = 35;
  const tx::Forest forest = tx::fit_forest(data, params);
  const auto templates = tx::build_templates(data, std::vector<double>{0.5, 0.5});

  for (const tx::Method method : {tx::Method::Ti, tx::Method::Shap}) {
    const tx::AccuracyReport report =
        tx::implicit_accuracy(forest, templates, data, method);
    EXPECT_FALSE(report.has_empty_cells());
    for (std::size_t t = 0; t < report.treatments.size(); ++t) {
      const tx::AccuracyCell& top1 = report.cells[t][0];
      const tx::AccuracyCell& top3 = report.cells[t][1];
      EXPECT_EQ(top1.samples, top3.samples);
      EXPECT_GE(top3.hits, top1.hits);
      EXPECT_GE(top1.rate(), 0.7) << "treatment " << t << " method " << to_string(method);
    }
  }
}

TEST(ImplicitAccuracy, JobCountDoesNotChangeCounts) {
  const tx::Dataset data = tx::synthesize({.n_rows = 120,
                                           .n_covariates = 2,
                                           .n_treatments = 2,
                                           .effect_weights = {1.0, 0.6},
                                           .noise_sd = 0.0,
                                           .seed = 36});
  tx::ForestParams params;
  params.n_estimators = 10;
  params.max_depth = 6;
  const tx::Forest forest = tx::fit_forest(data, params);
  const auto templates = tx::build_templates(data, std::vector<double>{0.5, 0.5});
  const auto serial = tx::implicit_accuracy(forest, templates, data, tx::Method::Shap, {1, 3}, 1);
  const auto threaded =
      tx::implicit_accuracy(forest, templates, data, tx::Method::Shap, {1, 3}, 4);
  for (std::size_t t = 0; t < serial.cells.size(); ++t) {
    for (std::size_t ki = 0; ki < serial.cells[t].size(); ++ki) {
      EXPECT_EQ(serial.cells[t][ki].hits, threaded.cells[t][ki].hits);
      EXPECT_EQ(serial.cells[t][ki].samples, threaded.cells[t][ki].samples);
    }
  }
}

TEST(ExplicitAccuracy, WrapsLevelsAndCountsBothDirections) {
  // One tree separates the three levels of t0 into leaves 0 / 3 / 9, so every
  // perturbation changes the prediction and the moved treatment dominates the
  // attribution difference. Wrapping 2 -> 0 and 0 -> 2 must land on real
  // levels for that to hold.
  using tx::NodeKind;
  tx::RegressionTree tree;
  tree.nodes.resize(5);
  tree.nodes[0] = {NodeKind::Internal, 1, 0.5, 1, 2, 3.0, 6};
  tree.nodes[1] = {NodeKind::Leaf, -1, 0.0, -1, -1, 0.0, 2};
  tree.nodes[2] = {NodeKind::Internal, 1, 1.5, 3, 4, 4.5, 4};
  tree.nodes[3] = {NodeKind::Leaf, -1, 0.0, -1, -1, 3.0, 2};
  tree.nodes[4] = {NodeKind::Leaf, -1, 0.0, -1, -1, 9.0, 2};
  tree.depth = 2;
  const tx::Forest forest = txtest::make_forest({tree}, 2);

  const tx::Dataset data = txtest::make_dataset(
      2, {{0.5, 0.0}, {0.5, 1.0}, {0.5, 2.0}}, {0.0, 3.0, 9.0}, /*n_treatments=*/1);
  for (const tx::Method method : {tx::Method::Ti, tx::Method::Shap}) {
    const tx::AccuracyReport report = tx::explicit_accuracy(forest, data, method, {1});
    ASSERT_EQ(report.cells.size(), 1u);
    EXPECT_EQ(report.cells[0][0].samples, 6);  // 3 rows x 2 directions
    EXPECT_EQ(report.cells[0][0].hits, 6);
  }
}

TEST(ExplicitAccuracy, ValidatesLevelsAndArguments) {
  const tx::Forest forest = treatment_sensitive_forest();
  const tx::Dataset bad_level = txtest::make_dataset(
      3, {{0.5, 3.0, 0.0}}, {1.0}, /*n_treatments=*/2);
  EXPECT_THROW(tx::explicit_accuracy(forest, bad_level, tx::Method::Ti), tx::ValidationError);
  const tx::Dataset fractional = txtest::make_dataset(
      3, {{0.5, 0.5, 0.0}}, {1.0}, /*n_treatments=*/2);
  EXPECT_THROW(tx::explicit_accuracy(forest, fractional, tx::Method::Ti), tx::ValidationError);
  const tx::Dataset no_treatments = txtest::make_dataset(2, {{0.5, 0.5}}, {1.0});
  EXPECT_THROW(tx::explicit_accuracy(forest, no_treatments, tx::Method::Ti), tx::ArgumentError);
  const tx::Dataset empty = txtest::make_dataset(3, {}, {}, /*n_treatments=*/2);
  EXPECT_THROW(tx::explicit_accuracy(forest, empty, tx::Method::Ti), tx::ArgumentError);
  const tx::Dataset ok = txtest::make_dataset(3, {{0.5, 1.0, 2.0}}, {1.0}, /*n_treatments=*/2);
  EXPECT_THROW(tx::explicit_accuracy(forest, ok, tx::Method::Ti, {-1}), tx::ArgumentError);
}

TEST(ExplicitAccuracy, RecoversTreatmentsOnLearnedForest) {
  const tx::Dataset data = tx::synthesize({.n_rows = 250,
                                           .n_covariates = 2,
                                           .n_treatments = 2,
                                           .effect_weights = {1.0, 0.6},
                                           .noise_sd = 0.0,
                                           .seed = 37});
  tx::ForestParams params;
  params.n_estimators = 30;
  params.max_depth = 10;
  params.seed = 37;
  const tx::Forest forest = tx::fit_forest(data, params);

  for (const tx::Method method : {tx::Method::Ti, tx::Method::Shap}) {
    const tx::AccuracyReport report = tx::explicit_accuracy(forest, data, method);
    for (std::size_t t = 0; t < report.treatments.size(); ++t) {
      const tx::AccuracyCell& top1 = report.cells[t][0];
      const tx::AccuracyCell& top3 = report.cells[t][1];
      EXPECT_EQ(top1.samples, static_cast<long long>(2 * data.n_rows()));
      EXPECT_GE(top3.hits, top1.hits);
      EXPECT_GE(top1.rate(), 0.8) << "treatment " << t << " method " << to_string(method);
    }
    const auto avg = report.average(0);
    ASSERT_TRUE(avg.has_value());
    EXPECT_GE(*avg, 0.8);
  }
}

TEST(ExplicitAccuracy, JobCountDoesNotChangeCounts) {
  const tx::Dataset data = tx::synthesize({.n_rows = 60,
                                           .n_covariates = 2,
                                           .n_treatments = 2,
                                           .effect_weights = {1.0, 0.6},
                                           .noise_sd = 0.0,
                                           .seed = 38});
  tx::ForestParams params;
  params.n_estimators = 10;
  params.max_depth = 6;
  const tx::Forest forest = tx::fit_forest(data, params);
  const auto serial = tx::explicit_accuracy(forest, data, tx::Method::Shap, {1, 3}, 1);
  const auto threaded = tx::explicit_accuracy(forest, data, tx::Method::Shap, {1, 3}, 4);
  for (std::size_t t = 0; t < serial.cells.size(); ++t) {
    for (std::size_t ki = 0; ki < serial.cells[t].size(); ++ki) {
      EXPECT_EQ(serial.cells[t][ki].hits, threaded.cells[t][ki].hits);
      EXPECT_EQ(serial.cells[t][ki].samples, threaded.cells[t][ki].samples);
    }
  }
}

TEST(AccuracyReport, RendersTextAndJson) {
  const tx::Dataset data = txtest::make_dataset(
      2, {{0.5, 0.0}, {0.5, 1.0}}, {0.0, 3.0}, /*n_treatments=*/1);
  using tx::NodeKind;
  tx::RegressionTree tree;
  tree.nodes.resize(3);
  tree.nodes[0] = {NodeKind::Internal, 1, 0.5, 1, 2, 1.5, 4};
  tree.nodes[1] = {NodeKind::Leaf, -1, 0.0, -1, -1, 0.0, 2};
  tree.nodes[2] = {NodeKind::Leaf, -1, 0.0, -1, -1, 3.0, 2};
  tree.depth = 1;
  const tx::Forest forest = txtest::make_forest({tree}, 2);

  const tx::AccuracyReport report = tx::explicit_accuracy(forest, data, tx::Method::Ti, {1, 3});
  const std::string text = tx::to_text(report, "explicit accuracy");
  EXPECT_NE(text.find("explicit accuracy (method: ti)"), std::string::npos);
  EXPECT_NE(text.find("top-1"), std::string::npos);
  EXPECT_NE(text.find("t0"), std::string::npos);
  EXPECT_NE(text.find("average"), std::string::npos);

  const nlohmann::json j = tx::to_json(report, "explicit_accuracy");
  EXPECT_EQ(j["metric"], "explicit_accuracy");
  EXPECT_EQ(j["params"]["method"], "ti");
  EXPECT_EQ(j["params"]["ks"], (std::vector<int>{1, 3}));
  ASSERT_EQ(j["cells"].size(), 2u);
  EXPECT_EQ(j["cells"][0]["treatment"], "t0");
  EXPECT_EQ(j["cells"][0]["k"], 1);
  EXPECT_EQ(j["cells"][0]["samples"], 4);
  EXPECT_TRUE(j["cells"][0]["rate"].is_number());
  ASSERT_EQ(j["averages"].size(), 2u);
  EXPECT_EQ(j["averages"][0]["k"], 1);
}
