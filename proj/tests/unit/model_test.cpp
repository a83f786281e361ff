#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "edgeai/errors.hpp"
#include "edgeai/latency.hpp"
#include "edgeai/model.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

namespace edgeai {
namespace {

using testing::thrown_code;

FeatureSchema unnamed_schema(std::size_t d)
{
  FeatureSchema schema;
  for (std::size_t i = 0; i < d; ++i) {
    schema.features.push_back({"x" + std::to_string(i), "", true, std::nullopt, std::nullopt});
  }
  return schema;
}

Dataset random_linear_data(std::mt19937_64& rng, std::size_t d, std::size_t n,
                           const std::vector<double>& w, double b, double noise = 0.0)
{
  Dataset data;
  data.feature_names = unnamed_schema(d).names();
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> x(d);
    double y = b;
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = testing::random_real(rng, -5, 5);
      y += w[i] * x[i];
    }
    data.add(std::move(x), y + noise * gauss(rng));
  }
  return data;
}

TEST(Predict, LinearArithmetic)
{
  const Model m = Model::linear({2.0, -1.0}, 0.5);
  const std::vector<double> x{1.0, 2.0};
  EXPECT_DOUBLE_EQ(predict(m, x).predicted, 0.5);
}

TEST(Predict, ZeroWeightsGiveBias)
{
  const Model m = Model::linear({0.0, 0.0}, 7.25);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> x{testing::random_real(rng), testing::random_real(rng)};
    EXPECT_EQ(predict(m, x).predicted, 7.25);
  }
}

TEST(Predict, ZeroMlpGivesZero)
{
  const Model m = Model::mlp(3, 4);
  const std::vector<double> x{1.0, -20.0, 300.0};
  EXPECT_EQ(predict(m, x).predicted, 0.0);
}

TEST(Predict, MlpMatchesHandForwardPass)
{
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 1 + rng() % 4;
    const std::size_t h = 1 + rng() % 4;
    Model m = init_mlp(d, h, rng());
    for (auto& v : m.b1) {
      v = testing::random_real(rng, -1, 1);
    }
    m.b2 = testing::random_real(rng, -1, 1);
    std::vector<double> x(d);
    for (auto& v : x) {
      v = testing::random_real(rng, -2, 2);
    }
    double expected = m.b2;
    for (std::size_t j = 0; j < h; ++j) {
      double z = m.b1[j];
      for (std::size_t i = 0; i < d; ++i) {
        z += m.w1[i * h + j] * x[i];
      }
      expected += m.w2[j] * std::tanh(z);
    }
    EXPECT_NEAR(predict(m, x).predicted, expected, 1e-12);
  }
}

TEST(Predict, InputChecks)
{
  const Model m = Model::linear({1.0, 1.0}, 0.0);
  EXPECT_EQ(thrown_code([&] { (void)predict(m, std::vector<double>{1.0}); }),
            Errc::DimensionMismatch);
  EXPECT_EQ(thrown_code([&] { (void)predict(m, std::vector<double>{1.0, NAN}); }),
            Errc::NonFiniteInput);
  EXPECT_EQ(thrown_code([&] { (void)predict(m, std::vector<double>{INFINITY, 1.0}); }),
            Errc::NonFiniteInput);
}

TEST(Predict, Deterministic)
{
  std::mt19937_64 rng(4);
  const Model m = init_mlp(4, 3, 9);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> x(4);
    for (auto& v : x) {
      v = testing::random_real(rng, -3, 3);
    }
    EXPECT_EQ(predict(m, x).predicted, predict(m, x).predicted);
  }
}

TEST(Classify, Examples)
{
  Prediction p;
  p.predicted = 3.5;
  EXPECT_EQ(classify(p, 3.5, {DeviationMode::Absolute, 0.1}), StatusFlag::OK);
  p.predicted = 10.0;
  EXPECT_EQ(classify(p, 12.0, {DeviationMode::Absolute, 1.5}), StatusFlag::NonOK);
  p.predicted = 90.0;
  EXPECT_EQ(classify(p, 100.0, {DeviationMode::Percentage, 0.05}), StatusFlag::NonOK);
  EXPECT_EQ(classify(p, std::nullopt, {DeviationMode::Absolute, 0.0}), StatusFlag::OK);
}

TEST(Classify, AbsoluteGridMatchesBruteForce)
{
  const DeviationPolicy policy{DeviationMode::Absolute, 0.75};
  for (int i = -40; i <= 40; ++i) {
    for (int j = -40; j <= 40; ++j) {
      Prediction p;
      p.predicted = i * 0.125;
      const double target = j * 0.125;
      const bool nonok = std::abs(p.predicted - target) > 0.75;
      EXPECT_EQ(classify(p, target, policy) == StatusFlag::NonOK, nonok) << i << "," << j;
    }
  }
}

TEST(Classify, PercentageUsesTargetMagnitudeWithFloor)
{
  Prediction p;
  p.predicted = 1e-12;
  // Zero target falls back to the absolute deviation against the threshold.
  EXPECT_EQ(classify(p, 0.0, {DeviationMode::Percentage, 0.5}), StatusFlag::OK);
  p.predicted = 0.6;
  EXPECT_EQ(classify(p, 0.0, {DeviationMode::Percentage, 0.5}), StatusFlag::NonOK);
  p.predicted = -95.0;
  EXPECT_EQ(classify(p, -100.0, {DeviationMode::Percentage, 0.05}), StatusFlag::OK);
  p.predicted = -94.0;
  EXPECT_EQ(classify(p, -100.0, {DeviationMode::Percentage, 0.05}), StatusFlag::NonOK);
}

TEST(FitLinear, TwoPointsLine)
{
  Dataset data;
  data.feature_names = {"x"};
  data.add({0.0}, 1.0);
  data.add({1.0}, 3.0);
  const Model m = recalibrate_auto(Model::linear({0.0}, 0.0), data);
  EXPECT_NEAR(m.w[0], 2.0, 1e-6);
  EXPECT_NEAR(m.b, 1.0, 1e-6);
  EXPECT_EQ(m.version, 2);
}

TEST(FitLinear, ConstantTargetZeroVariance)
{
  Dataset data;
  data.feature_names = {"a", "b"};
  for (int i = 0; i < 10; ++i) {
    data.add({4.0, -2.0}, 6.5);
  }
  const Model m = fit_linear(data);
  EXPECT_NEAR(m.w[0], 0.0, 1e-4);
  EXPECT_NEAR(m.w[1], 0.0, 1e-4);
  EXPECT_NEAR(m.b, 6.5, 1e-4);
}

TEST(FitLinear, InsufficientData)
{
  Dataset data;
  data.feature_names = {"a", "b"};
  data.add({1.0, 2.0}, 3.0);
  EXPECT_EQ(thrown_code([&] { (void)recalibrate_auto(Model::linear({0.0, 0.0}, 0.0), data); }),
            Errc::InsufficientData);
}

TEST(FitLinear, RejectsBadCorrections)
{
  Dataset data;
  data.feature_names = {"a"};
  data.add({1.0}, 1.0);
  data.add({NAN}, 2.0);
  EXPECT_EQ(thrown_code([&] { (void)recalibrate_auto(Model::linear({0.0}, 0.0), data); }),
            Errc::NonFiniteInput);
  Dataset wrong;
  wrong.feature_names = {"a", "b"};
  wrong.add({1.0, 2.0}, 1.0);
  wrong.add({2.0, 1.0}, 1.0);
  EXPECT_EQ(thrown_code([&] { (void)recalibrate_auto(Model::linear({0.0}, 0.0), wrong); }),
            Errc::DimensionMismatch);
}

TEST(FitLinear, RecoversNoiseFreeWeightsAgainstNormalEquations)
{
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t d = 1 + rng() % 8;
    std::vector<double> w(d);
    for (auto& v : w) {
      v = testing::random_real(rng, -10, 10);
    }
    const double b = testing::random_real(rng, -10, 10);
    const Dataset data = random_linear_data(rng, d, 100, w, b);
    const std::vector<double> oracle = testing::normal_equations(data);
    Model start = Model::linear(std::vector<double>(d, 0.0), 0.0);
    start.version = 7;
    const Model fit = recalibrate_auto(start, data);
    EXPECT_EQ(fit.version, 8);
    for (std::size_t i = 0; i < d; ++i) {
      EXPECT_NEAR(fit.w[i], w[i], 1e-4);
      EXPECT_NEAR(fit.w[i], oracle[i], 1e-6);
    }
    EXPECT_NEAR(fit.b, oracle[d], 1e-6);
  }
}

TEST(FitLinear, NoisyDataMatchesOracle)
{
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng() % 8;
    std::vector<double> w(d, 1.0);
    const Dataset data = random_linear_data(rng, d, 30 + rng() % 100, w, 3.0, 0.5);
    const auto oracle = testing::normal_equations(data);
    const Model fit = fit_linear(data);
    for (std::size_t i = 0; i < d; ++i) {
      EXPECT_NEAR(fit.w[i], oracle[i], 1e-6);
    }
    EXPECT_NEAR(fit.b, oracle[d], 1e-6);
  }
}

TEST(Mlp, GradientMatchesFiniteDifferences)
{
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng() % 4;
    const std::size_t h = 1 + rng() % 4;
    Model m = init_mlp(d, h, rng());
    for (auto& v : m.b1) {
      v = testing::random_real(rng, -0.5, 0.5);
    }
    std::vector<double> w(d, 0.7);
    const Dataset data = random_linear_data(rng, d, 12, w, 0.3, 0.1);
    const auto analytic = mlp_gradient(m, data);
    const auto numeric = testing::numeric_gradient(
        [&](const std::vector<double>& p) {
          Model probe = m;
          set_mlp_parameters(probe, p);
          return mlp_loss(probe, data);
        },
        mlp_parameters(m));
    ASSERT_EQ(analytic.size(), numeric.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
      EXPECT_LT(std::abs(analytic[i] - numeric[i]) / scale, 1e-4) << "param " << i;
    }
  }
}

TEST(Mlp, ParameterRoundTripAndLayout)
{
  Model m = init_mlp(3, 2, 5);
  auto p = mlp_parameters(m);
  ASSERT_EQ(p.size(), 3u * 2u + 2u + 2u + 1u);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<double>(i);
  }
  set_mlp_parameters(m, p);
  EXPECT_EQ(m.w1[5], 5.0);
  EXPECT_EQ(m.b1[0], 6.0);
  EXPECT_EQ(m.w2[1], 9.0);
  EXPECT_EQ(m.b2, 10.0);
  EXPECT_EQ(mlp_parameters(m), p);
}

TEST(Mlp, RecalibrationLowersLossAndBumpsVersion)
{
  std::mt19937_64 rng(41);
  std::vector<double> w{0.3, -0.2};
  const Dataset data = random_linear_data(rng, 2, 50, w, 0.1);
  Model m = init_mlp(2, 3, 1);
  const double before = mlp_loss(m, data);
  const Model next = recalibrate_auto(m, data);
  EXPECT_LT(mlp_loss(next, data), before);
  EXPECT_EQ(next.version, m.version + 1);
  EXPECT_EQ(init_mlp(2, 3, 1), init_mlp(2, 3, 1));
}

TEST(Confidence, Heuristic)
{
  ConfidenceTracker tracker;
  EXPECT_DOUBLE_EQ(tracker.scale(), 1.0);
  EXPECT_DOUBLE_EQ(tracker.confidence(0.0), 1.0);
  EXPECT_DOUBLE_EQ(tracker.confidence(2.0), std::exp(-2.0));
  tracker.observe(1.0);
  tracker.observe(3.0);
  // Population standard deviation of {1, 3}.
  EXPECT_DOUBLE_EQ(tracker.scale(), 1.0);
  EXPECT_DOUBLE_EQ(tracker.mean_error(), 2.0);
  EXPECT_DOUBLE_EQ(tracker.confidence(std::nullopt), std::exp(-2.0));
  for (int i = 0; i < 500; ++i) {
    tracker.observe(i % 7);
  }
  EXPECT_EQ(tracker.samples(), ConfidenceTracker::kWindow);
}

TEST(Confidence, AlwaysInUnitInterval)
{
  std::mt19937_64 rng(51);
  ConfidenceTracker tracker;
  const Model m = Model::linear({1.0}, 0.0);
  for (int i = 0; i < 2000; ++i) {
    const double x = testing::random_real(rng, -100, 100);
    const std::optional<double> target =
        rng() % 3 == 0 ? std::nullopt : std::optional(x + testing::random_real(rng, -50, 50));
    const Prediction p = predict(m, std::vector<double>{x}, tracker, target);
    EXPECT_GE(p.confidence, 0.0);
    EXPECT_LE(p.confidence, 1.0);
    EXPECT_GE(p.inference_latency_us, 0);
  }
}

TEST(Artifact, LinearRoundTrip)
{
  Model m = Model::linear({1.5, -2.25, 0.1, 1e-300}, 3.0);
  m.version = 4;
  m.trained_at_ms = 1700000000123;
  const ModelArtifact a = make_artifact(m, testing::plant_schema(), {0.25, 0.97});
  EXPECT_EQ(deserialize_model(serialize_model(a)), a);
}

TEST(Artifact, RandomRoundTrips)
{
  std::mt19937_64 rng(61);
  for (int i = 0; i < 200; ++i) {
    const ModelArtifact a = testing::random_artifact(rng);
    ASSERT_EQ(deserialize_model(serialize_model(a)), a) << i;
  }
}

TEST(Artifact, Failures)
{
  const ModelArtifact a = make_artifact(Model::linear({1, 2, 3, 4}, 0), testing::plant_schema());
  const std::string bytes = serialize_model(a);
  EXPECT_EQ(thrown_code([&] { (void)deserialize_model(bytes.substr(0, bytes.size() / 2)); }),
            Errc::CorruptArtifact);
  auto doc = artifact_to_json(a);
  doc["format_version"] = 999;
  EXPECT_EQ(thrown_code([&] { (void)artifact_from_json(doc); }), Errc::FormatVersionUnsupported);
  doc = artifact_to_json(a);
  doc["feature_schema_hash"] = "0000";
  EXPECT_EQ(thrown_code([&] { (void)artifact_from_json(doc); }), Errc::CorruptArtifact);
  doc = artifact_to_json(a);
  doc["weights"]["w"] = {1.0};
  EXPECT_EQ(thrown_code([&] { (void)artifact_from_json(doc); }), Errc::CorruptArtifact);
  doc = artifact_to_json(a);
  doc["kind"] = "forest";
  EXPECT_EQ(thrown_code([&] { (void)artifact_from_json(doc); }), Errc::CorruptArtifact);
}

TEST(Artifact, WireLayout)
{
  const ModelArtifact a = make_artifact(init_mlp(4, 2, 3), testing::plant_schema());
  const auto doc = artifact_to_json(a);
  EXPECT_EQ(doc.at("format_version"), 1);
  EXPECT_EQ(doc.at("kind"), "mlp1hidden");
  EXPECT_EQ(doc.at("h"), 2);
  EXPECT_EQ(doc.at("weights").at("w1").size(), 4u);
  EXPECT_TRUE(doc.at("metrics").contains("accuracy"));
  EXPECT_EQ(doc.at("feature_schema_hash"), schema_hash(testing::plant_schema()));
}

TEST(Metrics, MseAndWithinPolicy)
{
  Dataset data;
  data.feature_names = {"x"};
  data.add({1.0}, 1.0);
  data.add({2.0}, 3.0);
  data.add({3.0}, 3.0);
  data.add({4.0}, 4.1);
  const Model identity = Model::linear({1.0}, 0.0);
  EXPECT_NEAR(mean_squared_error(identity, data), (0.0 + 1.0 + 0.0 + 0.01) / 4.0, 1e-12);
  EXPECT_DOUBLE_EQ(within_policy_fraction(identity, data, {DeviationMode::Absolute, 0.5}), 0.75);
}

TEST(Latency, NearestRank)
{
  EXPECT_EQ(nearest_rank({15, 20, 35, 40, 50}, 5), 15);
  EXPECT_EQ(nearest_rank({15, 20, 35, 40, 50}, 30), 20);
  EXPECT_EQ(nearest_rank({15, 20, 35, 40, 50}, 40), 20);
  EXPECT_EQ(nearest_rank({15, 20, 35, 40, 50}, 50), 35);
  EXPECT_EQ(nearest_rank({15, 20, 35, 40, 50}, 100), 50);
  EXPECT_EQ(nearest_rank({3, 1, 2}, 0), 1);
  EXPECT_EQ(thrown_code([] { (void)nearest_rank({}, 50); }), Errc::NoSamples);
}

TEST(Latency, StatsAgainstSortedScan)
{
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> samples(1 + rng() % 500);
    for (auto& s : samples) {
      s = testing::random_real(rng, 0, 250);
    }
    const LatencyStats stats = latency_stats(samples);
    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    auto scan = [&](double p) {
      for (double v : sorted) {
        const auto at_or_below = std::count_if(sorted.begin(), sorted.end(),
                                               [&](double s) { return s <= v; });
        if (100.0 * static_cast<double>(at_or_below) >= p * static_cast<double>(sorted.size())) {
          return v;
        }
      }
      return sorted.back();
    };
    EXPECT_EQ(stats.count, samples.size());
    EXPECT_EQ(stats.p50, scan(50));
    EXPECT_EQ(stats.p95, scan(95));
    EXPECT_EQ(stats.p99, scan(99));
    EXPECT_EQ(stats.max, sorted.back());
    EXPECT_LE(stats.p50, stats.p95);
    EXPECT_LE(stats.p95, stats.p99);
  }
}

}  // namespace
}  // namespace edgeai
