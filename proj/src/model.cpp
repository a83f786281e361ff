#include "edgeai/model.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "edgeai/errors.hpp"
#include "edgeai/messages.hpp"

namespace edgeai {

using nlohmann::json;

std::string_view to_string(ModelKind kind) noexcept
{
  return kind == ModelKind::Linear ? "linear" : "mlp1hidden";
}

StatusFlag classify(const Prediction& prediction, std::optional<double> target,
                    const DeviationPolicy& policy) noexcept
{
  if (!target) {
    return StatusFlag::OK;
  }
  return deviation_exceeds(prediction.predicted, *target, policy) ? StatusFlag::NonOK
                                                                  : StatusFlag::OK;
}

Model Model::linear(std::vector<double> weights, double bias)
{
  Model model;
  model.kind = ModelKind::Linear;
  model.d = weights.size();
  model.w = std::move(weights);
  model.b = bias;
  return model;
}

Model Model::mlp(std::size_t d, std::size_t h)
{
  Model model;
  model.kind = ModelKind::Mlp1Hidden;
  model.d = d;
  model.h = h;
  model.w1.assign(d * h, 0.0);
  model.b1.assign(h, 0.0);
  model.w2.assign(h, 0.0);
  return model;
}

Model init_mlp(std::size_t d, std::size_t h, std::uint64_t seed)
{
  Model model = Model::mlp(d, h);
  std::mt19937_64 rng(seed);
  auto uniform = [&](double limit) {
    return (static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * limit;
  };
  const double in_limit = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(d, 1)));
  const double out_limit = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(h, 1)));
  for (auto& v : model.w1) {
    v = uniform(in_limit);
  }
  for (auto& v : model.w2) {
    v = uniform(out_limit);
  }
  return model;
}

double forward(const Model& model, std::span<const double> x) noexcept
{
  if (model.kind == ModelKind::Linear) {
    double y = model.b;
    for (std::size_t i = 0; i < model.d; ++i) {
      y += model.w[i] * x[i];
    }
    return y;
  }
  double y = model.b2;
  for (std::size_t j = 0; j < model.h; ++j) {
    double z = model.b1[j];
    for (std::size_t i = 0; i < model.d; ++i) {
      z += x[i] * model.w1[i * model.h + j];
    }
    y += model.w2[j] * std::tanh(z);
  }
  return y;
}

double ConfidenceTracker::scale() const noexcept
{
  if (errors_.size() < 2) {
    return 1.0;
  }
  const double mean = mean_error();
  double sq = 0.0;
  for (double e : errors_) {
    sq += (e - mean) * (e - mean);
  }
  return std::max(std::sqrt(sq / static_cast<double>(errors_.size())), 1e-9);
}

double ConfidenceTracker::mean_error() const noexcept
{
  if (errors_.empty()) {
    return 0.0;
  }
  return std::accumulate(errors_.begin(), errors_.end(), 0.0) /
         static_cast<double>(errors_.size());
}

double ConfidenceTracker::confidence(std::optional<double> residual) const noexcept
{
  const double r = std::abs(residual.value_or(mean_error()));
  return std::clamp(std::exp(-r / scale()), 0.0, 1.0);
}

void ConfidenceTracker::observe(double absolute_error)
{
  errors_.push_back(std::abs(absolute_error));
  if (errors_.size() > kWindow) {
    errors_.pop_front();
  }
}

namespace {

void check_input(const Model& model, std::span<const double> x)
{
  if (x.size() != model.d) {
    throw Error(Errc::DimensionMismatch, "features",
                "expected " + std::to_string(model.d) + " features, got " +
                    std::to_string(x.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw Error(Errc::NonFiniteInput, "features", "feature " + std::to_string(i) + " is not finite");
    }
  }
}

}  // namespace

Prediction predict(const Model& model, std::span<const double> x)
{
  check_input(model, x);
  const auto start = std::chrono::steady_clock::now();
  Prediction prediction;
  prediction.predicted = forward(model, x);
  prediction.model_version = model.version;
  prediction.inference_latency_us = std::chrono::duration_cast<std::chrono::microseconds>(
                                        std::chrono::steady_clock::now() - start)
                                        .count();
  return prediction;
}

Prediction predict(const Model& model, std::span<const double> x, ConfidenceTracker& tracker,
                   std::optional<double> target)
{
  Prediction prediction = predict(model, x);
  std::optional<double> residual;
  if (target) {
    residual = prediction.predicted - *target;
  }
  prediction.confidence = tracker.confidence(residual);
  if (residual) {
    tracker.observe(*residual);
  }
  return prediction;
}

namespace {

void check_dataset(const Dataset& data, std::size_t d)
{
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (data.x[r].size() != d) {
      throw Error(Errc::DimensionMismatch, "corrections",
                  "row " + std::to_string(r) + " has " + std::to_string(data.x[r].size()) +
                      " features, expected " + std::to_string(d));
    }
    if (!std::isfinite(data.y[r]) ||
        !std::all_of(data.x[r].begin(), data.x[r].end(), [](double v) { return std::isfinite(v); })) {
      throw Error(Errc::NonFiniteInput, "corrections", "row " + std::to_string(r) + " is not finite");
    }
  }
}

Eigen::MatrixXd to_matrix(const Dataset& data, std::size_t d)
{
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data.x[r][c];
    }
  }
  return x;
}

}  // namespace

Model fit_linear(const Dataset& data, double lambda, int refinements)
{
  if (data.size() == 0) {
    throw Error(Errc::InsufficientData, "corrections", "no rows to fit");
  }
  const std::size_t d = data.x.front().size();
  check_dataset(data, d);
  const Eigen::MatrixXd x = to_matrix(data, d);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(data.y.data(),
                                                              static_cast<Eigen::Index>(data.size()));
  // Centering takes the bias out of the penalized system.
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;

  Eigen::MatrixXd a = xc.transpose() * xc;
  const Eigen::VectorXd rhs = xc.transpose() * yc;
  a.diagonal().array() += lambda;
  const Eigen::LDLT<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success || (lambda <= 0.0 && !solver.isPositive())) {
    throw Error(Errc::SingularSystem, "corrections", "normal equations are singular");
  }
  Eigen::VectorXd theta = solver.solve(rhs);
  for (int k = 0; k < refinements; ++k) {
    theta = solver.solve(rhs + lambda * theta);
  }
  if (!theta.allFinite()) {
    throw Error(Errc::SingularSystem, "corrections", "normal equations are singular");
  }
  Model model = Model::linear(std::vector<double>(theta.data(), theta.data() + theta.size()),
                              y_mean - x_mean.dot(theta));
  model.trained_at_ms = wall_clock_ms();
  return model;
}

std::vector<double> mlp_parameters(const Model& model)
{
  std::vector<double> out;
  out.reserve(model.w1.size() + 2 * model.h + 1);
  out.insert(out.end(), model.w1.begin(), model.w1.end());
  out.insert(out.end(), model.b1.begin(), model.b1.end());
  out.insert(out.end(), model.w2.begin(), model.w2.end());
  out.push_back(model.b2);
  return out;
}

void set_mlp_parameters(Model& model, std::span<const double> p)
{
  const std::size_t expected = model.d * model.h + 2 * model.h + 1;
  if (p.size() != expected) {
    throw Error(Errc::DimensionMismatch, "parameters",
                "expected " + std::to_string(expected) + " parameters, got " +
                    std::to_string(p.size()));
  }
  auto it = p.begin();
  std::copy_n(it, model.w1.size(), model.w1.begin());
  it += static_cast<std::ptrdiff_t>(model.w1.size());
  std::copy_n(it, model.h, model.b1.begin());
  it += static_cast<std::ptrdiff_t>(model.h);
  std::copy_n(it, model.h, model.w2.begin());
  it += static_cast<std::ptrdiff_t>(model.h);
  model.b2 = *it;
}

namespace {

struct MlpView {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w1;
  Eigen::Map<const Eigen::VectorXd> b1;
  Eigen::Map<const Eigen::VectorXd> w2;

  explicit MlpView(const Model& m)
      : w1(m.w1.data(), static_cast<Eigen::Index>(m.d), static_cast<Eigen::Index>(m.h)),
        b1(m.b1.data(), static_cast<Eigen::Index>(m.h)),
        w2(m.w2.data(), static_cast<Eigen::Index>(m.h))
  {
  }
};

}  // namespace

double mlp_loss(const Model& model, const Dataset& data)
{
  return mean_squared_error(model, data);
}

std::vector<double> mlp_gradient(const Model& model, const Dataset& data)
{
  if (data.size() == 0) {
    throw Error(Errc::InsufficientData, "data", "no rows");
  }
  const MlpView v(model);
  const Eigen::MatrixXd x = to_matrix(data, model.d);
  const auto n = static_cast<double>(data.size());
  // Hidden activations, one row per sample.
  const Eigen::MatrixXd a = ((x * v.w1).rowwise() + v.b1.transpose()).array().tanh().matrix();
  Eigen::VectorXd out = (a * v.w2).array() + model.b2;
  const Eigen::VectorXd y =
      Eigen::Map<const Eigen::VectorXd>(data.y.data(), static_cast<Eigen::Index>(data.size()));
  const Eigen::VectorXd delta = 2.0 / n * (out - y);

  const Eigen::VectorXd g_w2 = a.transpose() * delta;
  const double g_b2 = delta.sum();
  // Back through tanh: d tanh(z) = 1 - tanh(z)^2.
  const Eigen::MatrixXd dz =
      ((delta * v.w2.transpose()).array() * (1.0 - a.array().square())).matrix();
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> g_w1 =
      x.transpose() * dz;
  const Eigen::VectorXd g_b1 = dz.colwise().sum().transpose();

  std::vector<double> grad;
  grad.reserve(model.d * model.h + 2 * model.h + 1);
  grad.insert(grad.end(), g_w1.data(), g_w1.data() + g_w1.size());
  grad.insert(grad.end(), g_b1.data(), g_b1.data() + g_b1.size());
  grad.insert(grad.end(), g_w2.data(), g_w2.data() + g_w2.size());
  grad.push_back(g_b2);
  return grad;
}

Model train_mlp(Model model, const Dataset& data, const MlpTrainOptions& options)
{
  if (model.kind != ModelKind::Mlp1Hidden) {
    throw Error(Errc::ConfigError, "kind", "train_mlp needs an MLP model");
  }
  if (data.size() == 0) {
    throw Error(Errc::InsufficientData, "corrections", "no rows to train on");
  }
  check_dataset(data, model.d);
  std::vector<double> params = mlp_parameters(model);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const auto grad = mlp_gradient(model, data);
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] -= options.learning_rate * grad[i];
    }
    set_mlp_parameters(model, params);
  }
  model.trained_at_ms = wall_clock_ms();
  return model;
}

Model recalibrate_auto(const Model& model, const Dataset& corrections)
{
  Model next;
  if (model.kind == ModelKind::Linear) {
    if (corrections.size() < model.d + 1) {
      throw Error(Errc::InsufficientData, "corrections",
                  "need at least " + std::to_string(model.d + 1) + " corrections, got " +
                      std::to_string(corrections.size()));
    }
    check_dataset(corrections, model.d);
    next = fit_linear(corrections);
  } else {
    if (corrections.size() == 0) {
      throw Error(Errc::InsufficientData, "corrections", "no corrections");
    }
    next = train_mlp(model, corrections);
  }
  next.version = model.version + 1;
  next.feature_schema_hash = model.feature_schema_hash;
  return next;
}

double mean_squared_error(const Model& model, const Dataset& data)
{
  if (data.size() == 0) {
    return 0.0;
  }
  double sum = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const double e = forward(model, data.x[r]) - data.y[r];
    sum += e * e;
  }
  return sum / static_cast<double>(data.size());
}

double within_policy_fraction(const Model& model, const Dataset& data, const DeviationPolicy& policy)
{
  if (data.size() == 0) {
    return 0.0;
  }
  std::size_t ok = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (!deviation_exceeds(forward(model, data.x[r]), data.y[r], policy)) {
      ++ok;
    }
  }
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

ModelArtifact make_artifact(Model model, const FeatureSchema& schema, ModelMetrics metrics)
{
  model.feature_schema_hash = schema_hash(schema);
  return ModelArtifact{std::move(model), metrics, schema, kArtifactFormatVersion};
}

json artifact_to_json(const ModelArtifact& artifact)
{
  const Model& m = artifact.model;
  json weights;
  json doc{{"format_version", artifact.format_version},
           {"kind", to_string(m.kind)},
           {"d", m.d}};
  if (m.kind == ModelKind::Linear) {
    weights = {{"w", m.w}, {"b", m.b}};
  } else {
    doc["h"] = m.h;
    json w1 = json::array();
    for (std::size_t i = 0; i < m.d; ++i) {
      w1.push_back(std::vector<double>(m.w1.begin() + static_cast<std::ptrdiff_t>(i * m.h),
                                       m.w1.begin() + static_cast<std::ptrdiff_t>((i + 1) * m.h)));
    }
    weights = {{"w1", w1}, {"b1", m.b1}, {"w2", m.w2}, {"b2", m.b2}};
  }
  doc["weights"] = weights;
  doc["version"] = m.version;
  doc["trained_at"] = m.trained_at_ms;
  doc["feature_schema_hash"] = m.feature_schema_hash;
  doc["metrics"] = {{"mse", artifact.metrics.mse}, {"accuracy", artifact.metrics.accuracy}};
  doc["schema"] = schema_to_json(artifact.schema);
  return doc;
}

ModelArtifact artifact_from_json(const json& doc)
{
  auto corrupt = [](const std::string& why) { return Error(Errc::CorruptArtifact, "artifact", why); };
  if (!doc.is_object()) {
    throw corrupt("artifact must be a JSON object");
  }
  if (!doc.contains("format_version") || !doc["format_version"].is_number_integer()) {
    throw corrupt("missing format_version");
  }
  const int format_version = doc["format_version"].get<int>();
  if (format_version != kArtifactFormatVersion) {
    throw Error(Errc::FormatVersionUnsupported, "format_version",
                "artifact format " + std::to_string(format_version) + " is not supported");
  }
  ModelArtifact artifact;
  try {
    Model& m = artifact.model;
    const std::string kind = doc.at("kind").get<std::string>();
    m.d = doc.at("d").get<std::size_t>();
    const json& weights = doc.at("weights");
    if (kind == "linear") {
      m.kind = ModelKind::Linear;
      m.w = weights.at("w").get<std::vector<double>>();
      m.b = weights.at("b").get<double>();
      if (m.w.size() != m.d) {
        throw corrupt("weight vector length does not match d");
      }
    } else if (kind == "mlp1hidden") {
      m.kind = ModelKind::Mlp1Hidden;
      m.h = doc.at("h").get<std::size_t>();
      const auto rows = weights.at("w1").get<std::vector<std::vector<double>>>();
      if (rows.size() != m.d) {
        throw corrupt("w1 row count does not match d");
      }
      for (const auto& row : rows) {
        if (row.size() != m.h) {
          throw corrupt("w1 column count does not match h");
        }
        m.w1.insert(m.w1.end(), row.begin(), row.end());
      }
      m.b1 = weights.at("b1").get<std::vector<double>>();
      m.w2 = weights.at("w2").get<std::vector<double>>();
      m.b2 = weights.at("b2").get<double>();
      if (m.b1.size() != m.h || m.w2.size() != m.h) {
        throw corrupt("hidden layer sizes do not match h");
      }
    } else {
      throw corrupt("unknown model kind '" + kind + "'");
    }
    m.version = doc.at("version").get<std::int64_t>();
    m.trained_at_ms = doc.at("trained_at").get<std::int64_t>();
    m.feature_schema_hash = doc.at("feature_schema_hash").get<std::string>();
    const json& metrics = doc.at("metrics");
    artifact.metrics.mse = metrics.at("mse").get<double>();
    artifact.metrics.accuracy = metrics.at("accuracy").get<double>();
    artifact.schema = schema_from_json(doc.at("schema"));
  } catch (const json::exception& e) {
    throw corrupt(std::string("malformed artifact: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::CorruptArtifact) {
      throw;
    }
    throw corrupt(e.what());
  }
  if (artifact.schema.size() != artifact.model.d) {
    throw corrupt("schema feature count does not match d");
  }
  if (schema_hash(artifact.schema) != artifact.model.feature_schema_hash) {
    throw corrupt("feature_schema_hash does not match the embedded schema");
  }
  artifact.format_version = format_version;
  return artifact;
}

std::string serialize_model(const ModelArtifact& artifact)
{
  return artifact_to_json(artifact).dump();
}

ModelArtifact deserialize_model(std::string_view bytes)
{
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw Error(Errc::CorruptArtifact, "artifact", std::string("artifact is not JSON: ") + e.what());
  }
  return artifact_from_json(doc);
}

}  // namespace edgeai
