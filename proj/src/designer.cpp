#include "edgeai/designer.hpp"

#include <httplib.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <random>
#include <sstream>
#include <variant>

#include "edgeai/errors.hpp"
#include "edgeai/ingest.hpp"
#include "edgeai/logging.hpp"
#include "edgeai/messages.hpp"

namespace edgeai {

using nlohmann::json;

namespace {

constexpr std::pair<StageKind, std::string_view> kStageNames[] = {
    {StageKind::DropMissing, "drop_missing"}, {StageKind::Normalize, "normalize"},
    {StageKind::TrainLinear, "train_linear"}, {StageKind::TrainMlp, "train_mlp"},
    {StageKind::Evaluate, "evaluate"},        {StageKind::ExportCsv, "export_csv"},
    {StageKind::ExportJson, "export_json"},   {StageKind::Deploy, "deploy"},
};

bool is_train(StageKind kind)
{
  return kind == StageKind::TrainLinear || kind == StageKind::TrainMlp;
}

enum class ValueType { Dataset, Model };

// Output type of a stage given its input type; nullopt when the input type
// is not accepted.
std::optional<ValueType> output_type(StageKind kind, ValueType input)
{
  switch (kind) {
    case StageKind::DropMissing:
    case StageKind::Normalize:
    case StageKind::ExportCsv:
      return input == ValueType::Dataset ? std::optional(ValueType::Dataset) : std::nullopt;
    case StageKind::TrainLinear:
    case StageKind::TrainMlp:
      return input == ValueType::Dataset ? std::optional(ValueType::Model) : std::nullopt;
    case StageKind::Evaluate:
    case StageKind::Deploy:
      return input == ValueType::Model ? std::optional(ValueType::Model) : std::nullopt;
    case StageKind::ExportJson:
      return input;
    case StageKind::Unknown:
      return std::nullopt;
  }
  return std::nullopt;
}

// Typed parameter access; problems are collected, defaults fill gaps.
class Params {
 public:
  Params(const json& params, std::vector<std::string>& problems)
      : params_(params), problems_(problems)
  {
    if (!params_.is_object()) {
      problems_.push_back("params must be an object");
    }
  }

  double number(const char* key, double fallback)
  {
    if (!params_.is_object() || !params_.contains(key)) {
      return fallback;
    }
    const json& v = params_[key];
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      problems_.push_back(std::string(key) + " must be a finite number");
      return fallback;
    }
    return v.get<double>();
  }

  std::int64_t integer(const char* key, std::int64_t fallback)
  {
    if (!params_.is_object() || !params_.contains(key)) {
      return fallback;
    }
    const json& v = params_[key];
    if (!v.is_number_integer()) {
      problems_.push_back(std::string(key) + " must be an integer");
      return fallback;
    }
    return v.get<std::int64_t>();
  }

  bool boolean(const char* key, bool fallback)
  {
    if (!params_.is_object() || !params_.contains(key)) {
      return fallback;
    }
    const json& v = params_[key];
    if (!v.is_boolean()) {
      problems_.push_back(std::string(key) + " must be a boolean");
      return fallback;
    }
    return v.get<bool>();
  }

  std::string string(const char* key, std::string fallback)
  {
    if (!params_.is_object() || !params_.contains(key)) {
      return fallback;
    }
    const json& v = params_[key];
    if (!v.is_string()) {
      problems_.push_back(std::string(key) + " must be a string");
      return fallback;
    }
    return v.get<std::string>();
  }

  void require(bool condition, const std::string& message)
  {
    if (!condition) {
      problems_.push_back(message);
    }
  }

  const json& raw() const { return params_; }

 private:
  const json& params_;
  std::vector<std::string>& problems_;
};

struct NormalizeParams {
  std::string method = "zscore";
};
struct LinearParams {
  double lambda = kRidgeLambda;
};
struct MlpParams {
  std::int64_t hidden = 4;
  std::int64_t epochs = 200;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};
struct EvaluateParams {
  double holdout_fraction = 0.2;
  bool shuffle = false;
  std::uint64_t seed = 0;
  std::optional<DeviationPolicy> policy;
};
struct ExportParams {
  std::string path;
};

std::vector<std::string> stage_problems(const Stage& stage, NormalizeParams* normalize = nullptr,
                                        LinearParams* linear = nullptr, MlpParams* mlp = nullptr,
                                        EvaluateParams* evaluate = nullptr,
                                        ExportParams* export_params = nullptr)
{
  std::vector<std::string> problems;
  Params p(stage.params, problems);
  switch (stage.kind) {
    case StageKind::DropMissing:
    case StageKind::Deploy:
    case StageKind::Unknown:
      break;
    case StageKind::Normalize: {
      NormalizeParams out{p.string("method", "zscore")};
      p.require(out.method == "zscore" || out.method == "minmax",
                "method must be \"zscore\" or \"minmax\"");
      if (normalize) *normalize = out;
      break;
    }
    case StageKind::TrainLinear: {
      LinearParams out{p.number("lambda", kRidgeLambda)};
      p.require(out.lambda >= 0.0, "lambda must be >= 0");
      if (linear) *linear = out;
      break;
    }
    case StageKind::TrainMlp: {
      MlpParams out;
      out.hidden = p.integer("hidden", out.hidden);
      out.epochs = p.integer("epochs", out.epochs);
      out.lr = p.number("lr", out.lr);
      const std::int64_t seed = p.integer("seed", 0);
      out.seed = static_cast<std::uint64_t>(seed);
      p.require(out.hidden >= 1 && out.hidden <= 1024, "hidden must be in [1, 1024]");
      p.require(out.epochs >= 1, "epochs must be >= 1");
      p.require(out.lr > 0.0, "lr must be > 0");
      if (mlp) *mlp = out;
      break;
    }
    case StageKind::Evaluate: {
      EvaluateParams out;
      out.holdout_fraction = p.number("holdout_fraction", out.holdout_fraction);
      out.shuffle = p.boolean("shuffle", false);
      out.seed = static_cast<std::uint64_t>(p.integer("seed", 0));
      p.require(out.holdout_fraction > 0.0 && out.holdout_fraction < 1.0,
                "holdout_fraction must be in (0, 1)");
      if (p.raw().is_object() && p.raw().contains("policy")) {
        try {
          out.policy = policy_from_json(p.raw()["policy"]);
        } catch (const Error& e) {
          problems.push_back(std::string("policy: ") + e.what());
        }
      }
      if (evaluate) *evaluate = out;
      break;
    }
    case StageKind::ExportCsv:
    case StageKind::ExportJson: {
      ExportParams out{p.string("path", "")};
      p.require(!out.path.empty(), "path must be a non-empty string");
      if (export_params) *export_params = out;
      break;
    }
  }
  return problems;
}

bool valid_url(const std::string& url)
{
  for (std::string_view scheme : {"http://", "https://"}) {
    if (url.rfind(scheme, 0) == 0) {
      const std::string rest = url.substr(scheme.size());
      const std::string authority = rest.substr(0, rest.find('/'));
      if (authority.empty()) {
        return false;
      }
      try {
        const HostPort hp = parse_host_port(authority.find(':') == std::string::npos
                                                ? authority + ":80"
                                                : authority);
        return is_valid_hostname(hp.host);
      } catch (const Error&) {
        return false;
      }
    }
  }
  return false;
}

}  // namespace

std::string_view to_string(StageKind kind) noexcept
{
  for (const auto& [k, name] : kStageNames) {
    if (k == kind) {
      return name;
    }
  }
  return "unknown";
}

StageKind stage_kind_from_string(std::string_view text) noexcept
{
  for (const auto& [k, name] : kStageNames) {
    if (name == text) {
      return k;
    }
  }
  return StageKind::Unknown;
}

std::string describe(const DeployTarget& target)
{
  switch (target.mode) {
    case TargetMode::LocalAgent: return "local_agent";
    case TargetMode::HttpNode: return "http_node:" + target.url;
    case TargetMode::File: return "file:" + target.path.string();
  }
  return "unknown";
}

PipelineSpec pipeline_from_json(const json& doc)
{
  if (!doc.is_object()) {
    throw Error(Errc::ParseError, "pipeline", "pipeline must be a JSON object");
  }
  try {
    PipelineSpec spec;
    spec.name = doc.value("name", std::string{});
    if (doc.contains("trigger")) {
      const json& t = doc.at("trigger");
      const std::string kind = t.value("kind", std::string("manual"));
      if (kind == "manual") {
        spec.trigger.kind = TriggerKind::Manual;
      } else if (kind == "schedule") {
        spec.trigger.kind = TriggerKind::Schedule;
        spec.trigger.interval_s = t.value("interval_s", 0.0);
      } else if (kind == "event") {
        spec.trigger.kind = TriggerKind::OnEvent;
        spec.trigger.topic = t.value("topic", std::string{});
      } else {
        throw Error(Errc::ParseError, "trigger.kind", "unknown trigger kind '" + kind + "'");
      }
    }
    if (doc.contains("target")) {
      const json& t = doc.at("target");
      const std::string mode = t.value("mode", std::string("local_agent"));
      if (mode == "local_agent") {
        spec.target.mode = TargetMode::LocalAgent;
      } else if (mode == "http_node") {
        spec.target.mode = TargetMode::HttpNode;
        spec.target.url = t.value("url", std::string{});
      } else if (mode == "file") {
        spec.target.mode = TargetMode::File;
        spec.target.path = t.value("path", std::string{});
      } else {
        throw Error(Errc::ParseError, "target.mode", "unknown target mode '" + mode + "'");
      }
    }
    for (const auto& s : doc.at("stages")) {
      Stage stage;
      stage.kind_name = s.at("kind").get<std::string>();
      stage.kind = stage_kind_from_string(stage.kind_name);
      stage.params = s.value("params", json::object());
      stage.input_ref = s.value("input_ref", std::string{});
      stage.output_name = s.value("output_name", std::string{});
      spec.stages.push_back(std::move(stage));
    }
    return spec;
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, "pipeline", std::string("malformed pipeline: ") + e.what());
  }
}

json pipeline_to_json(const PipelineSpec& spec)
{
  json trigger;
  switch (spec.trigger.kind) {
    case TriggerKind::Manual: trigger = {{"kind", "manual"}}; break;
    case TriggerKind::Schedule:
      trigger = {{"kind", "schedule"}, {"interval_s", spec.trigger.interval_s}};
      break;
    case TriggerKind::OnEvent: trigger = {{"kind", "event"}, {"topic", spec.trigger.topic}}; break;
  }
  json target;
  switch (spec.target.mode) {
    case TargetMode::LocalAgent: target = {{"mode", "local_agent"}}; break;
    case TargetMode::HttpNode: target = {{"mode", "http_node"}, {"url", spec.target.url}}; break;
    case TargetMode::File: target = {{"mode", "file"}, {"path", spec.target.path.string()}}; break;
  }
  json stages = json::array();
  for (const auto& stage : spec.stages) {
    stages.push_back({{"kind", stage.kind == StageKind::Unknown ? stage.kind_name
                                                                : std::string(to_string(stage.kind))},
                      {"params", stage.params},
                      {"input_ref", stage.input_ref},
                      {"output_name", stage.output_name}});
  }
  return json{{"name", spec.name}, {"trigger", trigger}, {"target", target}, {"stages", stages}};
}

PipelineSpec load_pipeline(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::FileNotFound, path.string(), "cannot open " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return pipeline_from_json(json::parse(text.str()));
  } catch (const json::parse_error& e) {
    throw Error(Errc::ParseError, path.string(), e.what());
  }
}

bool ValidationReport::has(std::string_view code) const
{
  return std::any_of(errors.begin(), errors.end(), [&](const auto& e) { return e.code == code; });
}

json ValidationReport::to_json() const
{
  json list = json::array();
  for (const auto& e : errors) {
    list.push_back({{"code", e.code}, {"stage", e.stage}, {"message", e.message}});
  }
  return json{{"valid", valid()}, {"errors", list}};
}

ValidationReport validate_pipeline(const PipelineSpec& spec)
{
  ValidationReport report;
  auto add = [&](std::string code, int stage, std::string message) {
    report.errors.push_back({std::move(code), stage, std::move(message)});
  };
  if (spec.stages.empty()) {
    add("EmptyPipeline", -1, "pipeline has no stages");
  }
  switch (spec.trigger.kind) {
    case TriggerKind::Manual: break;
    case TriggerKind::Schedule:
      if (!(spec.trigger.interval_s > 0.0)) {
        add("ParamOutOfRange", -1, "trigger interval_s must be > 0");
      }
      break;
    case TriggerKind::OnEvent:
      if (spec.trigger.topic.empty()) {
        add("InvalidTrigger", -1, "event trigger needs a topic");
      }
      break;
  }
  if (spec.target.mode == TargetMode::HttpNode && !valid_url(spec.target.url)) {
    add("InvalidTarget", -1, "http_node target needs a well-formed http(s) url");
  }
  if (spec.target.mode == TargetMode::File && spec.target.path.empty()) {
    add("InvalidTarget", -1, "file target needs a path");
  }

  std::map<std::string, ValueType, std::less<>> values{{std::string(kPipelineInput), ValueType::Dataset}};
  int trains = 0;
  bool deploys = false;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const Stage& stage = spec.stages[i];
    const int index = static_cast<int>(i);
    if (stage.kind == StageKind::Unknown) {
      add("UnknownStageKind", index, "unknown stage kind '" + stage.kind_name + "'");
    }
    trains += is_train(stage.kind) ? 1 : 0;
    deploys = deploys || stage.kind == StageKind::Deploy;
    for (const auto& problem : stage_problems(stage)) {
      add("ParamOutOfRange", index, problem);
    }
    std::optional<ValueType> produced;
    auto input = values.find(stage.input_ref);
    if (input == values.end()) {
      add("DanglingInputRef", index,
          "input_ref '" + stage.input_ref + "' is not the pipeline input or an earlier output");
    } else if (stage.kind != StageKind::Unknown) {
      produced = output_type(stage.kind, input->second);
      if (!produced) {
        add("InputTypeMismatch", index,
            std::string(to_string(stage.kind)) + " cannot consume '" + stage.input_ref + "'");
      }
    }
    if (!is_identifier(stage.output_name)) {
      add("InvalidOutputName", index, "output_name must be an identifier");
    } else if (values.count(stage.output_name) != 0) {
      add("DuplicateOutputName", index, "output_name '" + stage.output_name + "' is already defined");
    } else if (produced) {
      values.emplace(stage.output_name, *produced);
    } else {
      // Keep later references from cascading into dangling-ref errors.
      values.emplace(stage.output_name, input != values.end() ? input->second : ValueType::Dataset);
    }
  }
  if (deploys && trains == 0) {
    add("DeployWithoutTrain", -1, "a deploy stage needs a train stage");
  }
  if (deploys && trains > 1) {
    add("MultipleTrain", -1, "a deploying pipeline must have exactly one train stage");
  }
  return report;
}

json PipelineResult::to_json() const
{
  json exported = json::array();
  for (const auto& path : exports) {
    exported.push_back(path.string());
  }
  json doc{{"completed_stages", completed_stages}, {"exports", exported}};
  if (evaluated) {
    doc["metrics"] = {{"mse", metrics.mse}, {"accuracy", metrics.accuracy}};
  } else {
    doc["metrics"] = nullptr;
  }
  doc["artifact"] = artifact ? artifact_to_json(*artifact) : json(nullptr);
  if (receipt) {
    doc["receipt"] = {{"version", receipt->version}, {"target", receipt->target}, {"at", receipt->at_ms}};
  } else {
    doc["receipt"] = nullptr;
  }
  return doc;
}

namespace {

// Per-column x' = scale * x + shift, accumulated across normalize stages.
struct Affine {
  std::vector<double> scale;
  std::vector<double> shift;

  static Affine identity(std::size_t d) { return {std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)}; }
};

struct DataValue {
  Dataset data;
  // Same rows in pipeline-input units, for evaluating folded models.
  Dataset raw;
  Affine transform;
};

struct ModelValue {
  ModelArtifact artifact;
  std::optional<Dataset> holdout;
};

using Value = std::variant<DataValue, ModelValue>;

void drop_missing(DataValue& value)
{
  DataValue out{Dataset{value.data.feature_names, {}, {}}, Dataset{value.raw.feature_names, {}, {}},
                value.transform};
  for (std::size_t r = 0; r < value.data.size(); ++r) {
    const auto& row = value.data.x[r];
    const bool complete = std::isfinite(value.data.y[r]) &&
                          std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); });
    if (complete) {
      out.data.add(row, value.data.y[r]);
      out.raw.add(value.raw.x[r], value.raw.y[r]);
    }
  }
  value = std::move(out);
}

void normalize(DataValue& value, const std::string& method)
{
  const std::size_t d = value.data.dims();
  for (std::size_t c = 0; c < d; ++c) {
    double scale = 1.0;
    double center = 0.0;
    std::vector<double> column;
    for (const auto& row : value.data.x) {
      if (std::isfinite(row[c])) {
        column.push_back(row[c]);
      }
    }
    if (!column.empty()) {
      if (method == "zscore") {
        double mean = 0.0;
        for (double v : column) mean += v;
        mean /= static_cast<double>(column.size());
        double var = 0.0;
        for (double v : column) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(column.size()));
        center = mean;
        scale = 1.0 / std::max(sd, 1e-12);
      } else {
        const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
        center = *lo;
        scale = 1.0 / std::max(*hi - *lo, 1e-12);
      }
    }
    for (auto& row : value.data.x) {
      row[c] = (row[c] - center) * scale;
    }
    // Compose: x'' = scale * (a x + s) - scale * center.
    value.transform.scale[c] *= scale;
    value.transform.shift[c] = (value.transform.shift[c] - center) * scale;
  }
}

// Rewrites a model trained on transformed inputs so it reads raw inputs.
Model fold(Model model, const Affine& t)
{
  if (model.kind == ModelKind::Linear) {
    for (std::size_t i = 0; i < model.d; ++i) {
      model.b += model.w[i] * t.shift[i];
      model.w[i] *= t.scale[i];
    }
    return model;
  }
  for (std::size_t j = 0; j < model.h; ++j) {
    for (std::size_t i = 0; i < model.d; ++i) {
      double& w = model.w1[i * model.h + j];
      model.b1[j] += w * t.shift[i];
      w *= t.scale[i];
    }
  }
  return model;
}

std::vector<std::size_t> row_order(std::size_t n, bool shuffle, std::uint64_t seed)
{
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
  }
  return order;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& order, std::size_t begin,
               std::size_t end)
{
  Dataset out{data.feature_names, {}, {}};
  for (std::size_t i = begin; i < end; ++i) {
    out.add(data.x[order[i]], data.y[order[i]]);
  }
  return out;
}

json dataset_json(const Dataset& data, const std::string& target_name)
{
  json rows = json::array();
  for (std::size_t r = 0; r < data.size(); ++r) {
    json features = json::object();
    for (std::size_t c = 0; c < data.dims(); ++c) {
      features[data.feature_names[c]] = std::isnan(data.x[r][c]) ? json(nullptr) : json(data.x[r][c]);
    }
    rows.push_back({{"features", features},
                    {target_name, std::isnan(data.y[r]) ? json(nullptr) : json(data.y[r])}});
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(Errc::FileNotFound, path.string(), "cannot write " + path.string());
  }
  out << text;
}

}  // namespace

PipelineResult run_pipeline(const PipelineSpec& spec, const Dataset& dataset, const RunContext& context)
{
  const ValidationReport report = validate_pipeline(spec);
  if (!report.valid()) {
    const auto& first = report.errors.front();
    throw Error(Errc::StageFailure, first.stage >= 0 ? spec.stages[first.stage].output_name : spec.name,
                "pipeline is invalid: " + first.code + ": " + first.message);
  }
  if (dataset.dims() != context.schema.size()) {
    throw Error(Errc::StageFailure, std::string(kPipelineInput),
                "dataset has " + std::to_string(dataset.dims()) + " features, schema has " +
                    std::to_string(context.schema.size()));
  }

  // The evaluate stage reading a model decides how its training data is split.
  std::map<std::string, EvaluateParams, std::less<>> holdouts;
  for (const auto& stage : spec.stages) {
    if (stage.kind == StageKind::Evaluate && holdouts.count(stage.input_ref) == 0) {
      EvaluateParams params;
      (void)stage_problems(stage, nullptr, nullptr, nullptr, &params);
      holdouts.emplace(stage.input_ref, params);
    }
  }

  std::map<std::string, Value, std::less<>> values;
  values.emplace(std::string(kPipelineInput),
                 DataValue{dataset, dataset, Affine::identity(dataset.dims())});
  PipelineResult result;

  for (const auto& stage : spec.stages) {
    const std::string label = stage.output_name + " (" + std::string(to_string(stage.kind)) + ")";
    try {
      const Value& input = values.at(stage.input_ref);
      NormalizeParams normalize_params;
      LinearParams linear_params;
      MlpParams mlp_params;
      EvaluateParams evaluate_params;
      ExportParams export_params;
      (void)stage_problems(stage, &normalize_params, &linear_params, &mlp_params, &evaluate_params,
                           &export_params);

      switch (stage.kind) {
        case StageKind::DropMissing: {
          DataValue out = std::get<DataValue>(input);
          drop_missing(out);
          values.emplace(stage.output_name, std::move(out));
          break;
        }
        case StageKind::Normalize: {
          DataValue out = std::get<DataValue>(input);
          normalize(out, normalize_params.method);
          values.emplace(stage.output_name, std::move(out));
          break;
        }
        case StageKind::TrainLinear:
        case StageKind::TrainMlp: {
          const DataValue& data = std::get<DataValue>(input);
          const std::size_t n = data.data.size();
          std::optional<Dataset> holdout;
          Dataset train = data.data;
          if (auto it = holdouts.find(stage.output_name); it != holdouts.end()) {
            const auto count = static_cast<std::size_t>(
                std::ceil(it->second.holdout_fraction * static_cast<double>(n)));
            if (count >= n) {
              throw Error(Errc::InsufficientData, "holdout",
                          "holdout leaves no rows to train on (" + std::to_string(n) + " rows)");
            }
            const auto order = row_order(n, it->second.shuffle, it->second.seed);
            train = subset(data.data, order, 0, n - count);
            holdout = subset(data.raw, order, n - count, n);
          }
          if (train.size() == 0) {
            throw Error(Errc::InsufficientData, "dataset", "no rows to train on");
          }
          Model model;
          if (stage.kind == StageKind::TrainLinear) {
            model = fit_linear(train, linear_params.lambda, 0);
          } else {
            model = init_mlp(train.dims(), static_cast<std::size_t>(mlp_params.hidden), mlp_params.seed);
            model = train_mlp(std::move(model), train,
                              {static_cast<int>(mlp_params.epochs), mlp_params.lr});
          }
          model = fold(std::move(model), data.transform);
          model.version = 1;
          model.trained_at_ms = context.trained_at_ms;
          ModelValue out{make_artifact(std::move(model), context.schema), std::move(holdout)};
          result.artifact = out.artifact;
          values.emplace(stage.output_name, std::move(out));
          break;
        }
        case StageKind::Evaluate: {
          ModelValue out = std::get<ModelValue>(input);
          if (!out.holdout) {
            throw Error(Errc::InsufficientData, "holdout", "model has no holdout split");
          }
          const DeviationPolicy policy = evaluate_params.policy.value_or(context.policy);
          out.artifact.metrics.mse = mean_squared_error(out.artifact.model, *out.holdout);
          out.artifact.metrics.accuracy =
              within_policy_fraction(out.artifact.model, *out.holdout, policy);
          result.metrics = out.artifact.metrics;
          result.evaluated = true;
          result.artifact = out.artifact;
          values.emplace(stage.output_name, std::move(out));
          break;
        }
        case StageKind::ExportCsv: {
          const DataValue& data = std::get<DataValue>(input);
          write_dataset_csv(data.data, context.schema.target_name, export_params.path);
          result.exports.emplace_back(export_params.path);
          values.emplace(stage.output_name, data);
          break;
        }
        case StageKind::ExportJson: {
          if (const auto* model = std::get_if<ModelValue>(&input)) {
            write_text(export_params.path, serialize_model(model->artifact));
          } else {
            write_text(export_params.path,
                       dataset_json(std::get<DataValue>(input).data, context.schema.target_name).dump(2));
          }
          result.exports.emplace_back(export_params.path);
          values.emplace(stage.output_name, input);
          break;
        }
        case StageKind::Deploy: {
          const ModelValue& model = std::get<ModelValue>(input);
          result.receipt = deploy(model.artifact, spec.target, context.deploy.value_or(DeployOptions{}));
          values.emplace(stage.output_name, model);
          break;
        }
        case StageKind::Unknown:
          throw Error(Errc::ConfigError, stage.kind_name, "unknown stage kind");
      }
      result.completed_stages.push_back(stage.output_name);
    } catch (const Error& e) {
      if (e.code() == Errc::StageFailure) {
        throw;
      }
      throw Error(Errc::StageFailure, stage.output_name, "stage " + label + " failed: " + e.what(),
                  e.code());
    }
  }
  return result;
}

DeployReceipt deploy(const ModelArtifact& artifact, const DeployTarget& target,
                     const DeployOptions& options)
{
  DeployReceipt receipt;
  receipt.target = describe(target);
  switch (target.mode) {
    case TargetMode::File: {
      write_text(target.path, serialize_model(artifact));
      receipt.version = artifact.model.version;
      break;
    }
    case TargetMode::LocalAgent: {
      if (!options.session) {
        throw Error(Errc::TargetUnreachable, "local_agent", "no bus session for local deploy");
      }
      const std::string request_id = make_request_id();
      auto promise = std::make_shared<std::promise<CommandAck>>();
      auto future = promise->get_future();
      auto answered = std::make_shared<std::atomic<bool>>(false);
      auto subscription = options.session->subscribe(
          options.command_topic, [promise, answered, request_id](const Envelope& envelope) {
            try {
              const Command command = decode_command(envelope.payload);
              const auto* ack = std::get_if<CommandAck>(&command);
              if (ack != nullptr && ack->request_id == request_id && !answered->exchange(true)) {
                promise->set_value(*ack);
              }
            } catch (const Error&) {
            }
          });
      options.session->publish(options.command_topic,
                               encode_command(SwapCommand{request_id, artifact_to_json(artifact)}));
      if (future.wait_for(options.timeout) != std::future_status::ready) {
        throw Error(Errc::DeployTimeout, "local_agent",
                    "no acknowledgment within " + std::to_string(options.timeout.count()) + " ms");
      }
      const CommandAck ack = future.get();
      if (!ack.ok) {
        if (ack.error == to_string(Errc::SchemaHashMismatch)) {
          throw Error(Errc::SchemaHashMismatch, "feature_schema_hash",
                      "running agent uses a different feature schema");
        }
        throw Error(Errc::CommandRejected, "local_agent", "agent rejected the artifact: " + ack.error);
      }
      receipt.version = ack.model_version;
      break;
    }
    case TargetMode::HttpNode: {
      const auto scheme_end = target.url.find("://");
      const auto path_start = target.url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
      const std::string base = target.url.substr(0, path_start);
      std::string path = path_start == std::string::npos ? "" : target.url.substr(path_start);
      while (!path.empty() && path.back() == '/') {
        path.pop_back();
      }
      httplib::Client client(base);
      client.set_connection_timeout(options.timeout);
      client.set_read_timeout(options.timeout);
      client.set_write_timeout(options.timeout);
      auto res = client.Post(path + "/deploy", serialize_model(artifact), "application/json");
      if (!res) {
        if (res.error() == httplib::Error::Read || res.error() == httplib::Error::ConnectionTimeout) {
          throw Error(Errc::DeployTimeout, target.url, "no acknowledgment from " + target.url);
        }
        throw Error(Errc::TargetUnreachable, target.url,
                    "cannot reach " + target.url + ": " + httplib::to_string(res.error()));
      }
      if (res->status == 409) {
        throw Error(Errc::SchemaHashMismatch, "feature_schema_hash",
                    "node runs a different feature schema");
      }
      if (res->status != 200) {
        throw Error(Errc::CommandRejected, target.url,
                    "node answered HTTP " + std::to_string(res->status) + ": " + res->body);
      }
      try {
        receipt.version = json::parse(res->body).at("model_version").get<std::int64_t>();
      } catch (const json::exception& e) {
        throw Error(Errc::CommandRejected, target.url, std::string("bad deploy reply: ") + e.what());
      }
      break;
    }
  }
  receipt.at_ms = wall_clock_ms();
  log()->info("designer: deployed version {} to {}", receipt.version, receipt.target);
  return receipt;
}

ScheduleHandle::ScheduleHandle(const Trigger& trigger, Runner runner, BusPtr session)
    : runner_(std::move(runner))
{
  if (trigger.kind == TriggerKind::Manual) {
    throw Error(Errc::ConfigError, "trigger", "manual pipelines are not scheduled");
  }
  if (trigger.kind == TriggerKind::Schedule && !(trigger.interval_s > 0.0)) {
    throw Error(Errc::ConfigError, "trigger.interval_s", "interval must be positive");
  }
  if (trigger.kind == TriggerKind::OnEvent && (!session || trigger.topic.empty())) {
    throw Error(Errc::ConfigError, "trigger.topic", "event trigger needs a session and a topic");
  }
  runner_thread_ = std::thread([this] { runner_loop(); });
  if (trigger.kind == TriggerKind::Schedule) {
    timer_thread_ = std::thread(
        [this, interval = std::chrono::duration<double>(trigger.interval_s)] { timer_loop(interval); });
  } else {
    subscription_ = session->subscribe(trigger.topic, [this](const Envelope&) { fire(); });
  }
}

ScheduleHandle::~ScheduleHandle()
{
  stop();
}

void ScheduleHandle::stop()
{
  subscription_.unsubscribe();
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (timer_thread_.joinable()) {
    timer_thread_.join();
  }
  if (runner_thread_.joinable()) {
    runner_thread_.join();
  }
}

void ScheduleHandle::fire()
{
  {
    std::lock_guard lock(mutex_);
    if (stopping_) {
      return;
    }
    if (running_ || pending_) {
      ++skipped_;
      return;
    }
    pending_ = true;
  }
  cv_.notify_all();
}

bool ScheduleHandle::wait_idle(std::chrono::milliseconds timeout)
{
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] { return !running_ && !pending_; });
}

void ScheduleHandle::runner_loop()
{
  std::unique_lock lock(mutex_);
  while (true) {
    cv_.wait(lock, [&] { return stopping_ || pending_; });
    if (stopping_) {
      return;
    }
    pending_ = false;
    running_ = true;
    lock.unlock();
    try {
      runner_();
    } catch (const std::exception& e) {
      log()->error("designer: scheduled run failed: {}", e.what());
    }
    ++runs_;
    lock.lock();
    running_ = false;
    cv_.notify_all();
  }
}

void ScheduleHandle::timer_loop(std::chrono::duration<double> interval)
{
  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t k = 1;; ++k) {
    const auto due =
        start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(interval * static_cast<double>(k));
    {
      std::unique_lock lock(mutex_);
      if (cv_.wait_until(lock, due, [&] { return stopping_; })) {
        return;
      }
    }
    fire();
  }
}

std::unique_ptr<ScheduleHandle> schedule(const PipelineSpec& spec, ScheduleHandle::Runner runner,
                                         BusPtr session)
{
  return std::make_unique<ScheduleHandle>(spec.trigger, std::move(runner), std::move(session));
}

}  // namespace edgeai
