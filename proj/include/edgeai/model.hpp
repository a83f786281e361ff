#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeai/config.hpp"
#include "edgeai/dataset.hpp"
#include "edgeai/prediction.hpp"

namespace edgeai {

enum class ModelKind { Linear, Mlp1Hidden };

[[nodiscard]] std::string_view to_string(ModelKind kind) noexcept;

// Linear: y = w·x + b.
// Mlp1Hidden: y = w2·tanh(W1ᵀx + b1) + b2 with W1 stored row-major d×h
// (w1[i*h + j] connects input i to hidden unit j).
struct Model {
  ModelKind kind = ModelKind::Linear;
  std::size_t d = 0;
  std::size_t h = 0;
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> w1;
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;
  std::int64_t version = 1;
  std::int64_t trained_at_ms = 0;
  std::string feature_schema_hash;

  static Model linear(std::vector<double> weights, double bias);
  // All-zero network.
  static Model mlp(std::size_t d, std::size_t h);

  bool operator==(const Model&) const = default;
};

// Small random weights, zero biases; deterministic in the seed.
[[nodiscard]] Model init_mlp(std::size_t d, std::size_t h, std::uint64_t seed);

// Raw forward pass without input checks.
[[nodiscard]] double forward(const Model& model, std::span<const double> x) noexcept;

// Confidence heuristic: exp(-residual / s), where s is the standard deviation
// of the last 100 absolute errors (1.0 until two errors are known). Without a
// target the residual estimate is the mean recent absolute error.
class ConfidenceTracker {
 public:
  static constexpr std::size_t kWindow = 100;

  [[nodiscard]] double confidence(std::optional<double> residual) const noexcept;
  void observe(double absolute_error);
  [[nodiscard]] double scale() const noexcept;
  [[nodiscard]] double mean_error() const noexcept;
  [[nodiscard]] std::size_t samples() const noexcept { return errors_.size(); }

 private:
  std::deque<double> errors_;
};

// Throws DimensionMismatch or NonFiniteInput. Confidence is 1 without a tracker.
[[nodiscard]] Prediction predict(const Model& model, std::span<const double> x);
// Scores confidence from the tracker, then feeds it the error when a target exists.
[[nodiscard]] Prediction predict(const Model& model, std::span<const double> x,
                                 ConfidenceTracker& tracker, std::optional<double> target);

inline constexpr double kRidgeLambda = 1e-6;

// Ridge least squares with an unpenalized bias. `refinements` iterated-Tikhonov
// steps remove the regularization bias while keeping every solve well posed.
[[nodiscard]] Model fit_linear(const Dataset& data, double lambda = kRidgeLambda,
                               int refinements = 2);

struct MlpTrainOptions {
  int epochs = 200;
  double learning_rate = 1e-2;
};

// Mean squared error over the dataset.
[[nodiscard]] double mlp_loss(const Model& model, const Dataset& data);
// Gradient of mlp_loss in mlp_parameters() order.
[[nodiscard]] std::vector<double> mlp_gradient(const Model& model, const Dataset& data);
// Order: w1 (row-major), b1, w2, b2.
[[nodiscard]] std::vector<double> mlp_parameters(const Model& model);
void set_mlp_parameters(Model& model, std::span<const double> parameters);
// Full-batch gradient descent from the model's current weights.
[[nodiscard]] Model train_mlp(Model model, const Dataset& data, const MlpTrainOptions& options = {});

// Refit on operator corrections. Linear needs at least d + 1 rows. The result
// carries version + 1; the caller keeps the old model for rollback.
// Throws InsufficientData, DimensionMismatch or NonFiniteInput.
[[nodiscard]] Model recalibrate_auto(const Model& model, const Dataset& corrections);

[[nodiscard]] double mean_squared_error(const Model& model, const Dataset& data);
// Fraction of rows whose prediction is within the deviation policy of the
// row target, i.e. rows the model would classify OK.
[[nodiscard]] double within_policy_fraction(const Model& model, const Dataset& data,
                                            const DeviationPolicy& policy);

struct ModelMetrics {
  double mse = 0.0;
  double accuracy = 0.0;
  bool operator==(const ModelMetrics&) const = default;
};

inline constexpr int kArtifactFormatVersion = 1;

struct ModelArtifact {
  Model model;
  ModelMetrics metrics;
  FeatureSchema schema;
  int format_version = kArtifactFormatVersion;
  bool operator==(const ModelArtifact&) const = default;
};

[[nodiscard]] nlohmann::json artifact_to_json(const ModelArtifact& artifact);
// Throws FormatVersionUnsupported or CorruptArtifact.
[[nodiscard]] ModelArtifact artifact_from_json(const nlohmann::json& doc);
[[nodiscard]] std::string serialize_model(const ModelArtifact& artifact);
[[nodiscard]] ModelArtifact deserialize_model(std::string_view bytes);

// Model stamped with the schema it reads.
[[nodiscard]] ModelArtifact make_artifact(Model model, const FeatureSchema& schema,
                                          ModelMetrics metrics = {});

}  // namespace edgeai
