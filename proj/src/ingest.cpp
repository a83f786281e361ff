#include "edgeai/ingest.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "edgeai/errors.hpp"
#include "edgeai/logging.hpp"
#include "edgeai/messages.hpp"

namespace edgeai {

using nlohmann::json;

namespace {

constexpr std::string_view kTsColumn = "ts";

std::string_view trim(std::string_view text)
{
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) {
    text.remove_prefix(1);
  }
  while (!text.empty() &&
         (text.back() == ' ' || text.back() == '\t' || text.back() == '\r' || text.back() == '\n')) {
    text.remove_suffix(1);
  }
  return text;
}

double parse_number(std::string_view cell, const std::string& column)
{
  double value = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error(Errc::NonNumericValue, column,
                "column '" + column + "' holds non-numeric value '" + std::string(cell) + "'");
  }
  return value;
}

bool is_blank(std::string_view line)
{
  return trim(line).empty();
}

}  // namespace

json report_to_json(const ReplayReport& report)
{
  return json{{"rows_sent", report.rows_sent},
              {"rows_rejected", report.rows_rejected},
              {"duration_ms", report.duration.count()}};
}

std::vector<std::string_view> split_csv_line(std::string_view line)
{
  line = trim(line);
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      return cells;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

CsvLayout CsvLayout::schema_order(const FeatureSchema& schema, bool with_target)
{
  CsvLayout layout;
  layout.names_ = schema.names();
  if (with_target) {
    layout.names_.push_back(schema.target_name);
  }
  return layout;
}

CsvLayout CsvLayout::from_header(std::string_view header, const FeatureSchema& schema)
{
  CsvLayout layout;
  for (const auto cell : split_csv_line(header)) {
    std::string name(cell);
    if (name != kTsColumn && name != schema.target_name && !schema.index_of(name)) {
      throw Error(Errc::HeaderMismatch, name, "column '" + name + "' is not in the feature schema");
    }
    if (std::find(layout.names_.begin(), layout.names_.end(), name) != layout.names_.end()) {
      throw Error(Errc::HeaderMismatch, name, "column '" + name + "' appears twice");
    }
    layout.names_.push_back(std::move(name));
  }
  for (const auto& feature : schema.features) {
    if (feature.required &&
        std::find(layout.names_.begin(), layout.names_.end(), feature.name) == layout.names_.end()) {
      throw Error(Errc::HeaderMismatch, feature.name,
                  "required feature '" + feature.name + "' has no column");
    }
  }
  return layout;
}

Observation parse_csv_row(std::string_view line, const FeatureSchema& schema)
{
  const auto cells = split_csv_line(line);
  if (cells.size() != schema.size() && cells.size() != schema.size() + 1) {
    throw Error(Errc::ColumnCountMismatch, "row",
                "expected " + std::to_string(schema.size()) + " or " +
                    std::to_string(schema.size() + 1) + " columns, got " +
                    std::to_string(cells.size()));
  }
  return parse_csv_row(line, CsvLayout::schema_order(schema, cells.size() > schema.size()), schema);
}

Observation parse_csv_row(std::string_view line, const CsvLayout& layout,
                          const FeatureSchema& schema)
{
  const auto cells = split_csv_line(line);
  if (cells.size() != layout.columns()) {
    throw Error(Errc::ColumnCountMismatch, "row",
                "expected " + std::to_string(layout.columns()) + " columns, got " +
                    std::to_string(cells.size()));
  }
  json doc = json::object();
  std::optional<std::int64_t> ts;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string& column = layout.names_[i];
    if (cells[i].empty()) {
      continue;
    }
    const double value = parse_number(cells[i], column);
    if (column == kTsColumn) {
      ts = static_cast<std::int64_t>(value);
    } else {
      doc[column] = value;
    }
  }
  Observation observation = validate_observation_against_schema(doc, schema);
  observation.ts_ms = ts.value_or(wall_clock_ms());
  return observation;
}

ReplayReport replay_csv(const ReplaySpec& spec, const FeatureSchema& schema, BusSession& session,
                        const std::string& topic, const std::atomic<bool>* stop)
{
  if (!(spec.rate_hz > 0.0)) {
    throw Error(Errc::ConfigError, "rate_hz", "replay rate must be positive");
  }
  std::ifstream in(spec.csv_path);
  if (!in) {
    throw Error(Errc::FileNotFound, spec.csv_path.string(),
                "cannot open " + spec.csv_path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(Errc::HeaderMismatch, spec.csv_path.string(), "CSV file has no header row");
  }
  const CsvLayout layout = CsvLayout::from_header(line, schema);
  const std::streampos data_start = in.tellg();

  ReplayReport report;
  const auto period = std::chrono::duration<double>(1.0 / spec.rate_hz);
  const auto start = std::chrono::steady_clock::now();
  std::size_t index = 0;
  std::size_t line_number = 1;
  while (true) {
    while (std::getline(in, line)) {
      ++line_number;
      if (is_blank(line)) {
        continue;
      }
      if (stop != nullptr && stop->load()) {
        report.duration = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        return report;
      }
      std::this_thread::sleep_until(
          start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      period * static_cast<double>(index)));
      ++index;
      try {
        InputMessage message;
        message.observation = parse_csv_row(line, layout, schema);
        message.row_id = next_row_id();
        message.ingest_us = monotonic_us();
        session.publish(topic, encode_input(message, schema));
        ++report.rows_sent;
      } catch (const Error& e) {
        ++report.rows_rejected;
        log()->warn("replay: rejected line {}: {}", line_number, e.what());
      }
    }
    if (!spec.loop_forever || (stop != nullptr && stop->load()) || index == 0) {
      break;
    }
    in.clear();
    in.seekg(data_start);
    line_number = 1;
  }
  report.duration =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
  return report;
}

json sim_spec_to_json(const SensorSimSpec& spec)
{
  json features = json::array();
  for (const auto& f : spec.features) {
    features.push_back(
        {{"base", f.base}, {"noise_stddev", f.noise_stddev}, {"drift_per_step", f.drift_per_step}});
  }
  return json{{"features", features},
              {"anomaly",
               {{"probability", spec.anomaly.probability},
                {"magnitude_stddev_multiplier", spec.anomaly.magnitude_stddev_multiplier}}},
              {"true_weights", spec.true_weights},
              {"true_bias", spec.true_bias},
              {"target_noise_stddev", spec.target_noise_stddev},
              {"seed", spec.seed}};
}

SensorSimSpec sim_spec_from_json(const json& doc)
{
  try {
    SensorSimSpec spec;
    for (const auto& f : doc.at("features")) {
      spec.features.push_back({f.at("base").get<double>(), f.value("noise_stddev", 0.0),
                               f.value("drift_per_step", 0.0)});
    }
    if (doc.contains("anomaly")) {
      const auto& a = doc.at("anomaly");
      spec.anomaly.probability = a.value("probability", 0.0);
      spec.anomaly.magnitude_stddev_multiplier = a.value("magnitude_stddev_multiplier", 1.0);
    }
    spec.true_weights = doc.at("true_weights").get<std::vector<double>>();
    spec.true_bias = doc.value("true_bias", 0.0);
    spec.target_noise_stddev = doc.value("target_noise_stddev", 0.0);
    spec.seed = doc.value("seed", std::uint64_t{0});
    return spec;
  } catch (const json::exception& e) {
    throw Error(Errc::SpecMismatch, "simulator", std::string("malformed simulator spec: ") + e.what());
  }
}

void check_sim_spec(const SensorSimSpec& spec, const FeatureSchema& schema)
{
  if (spec.features.size() != schema.size()) {
    throw Error(Errc::SpecMismatch, "features",
                "simulator has " + std::to_string(spec.features.size()) +
                    " feature generators, schema has " + std::to_string(schema.size()));
  }
  if (spec.true_weights.size() != schema.size()) {
    throw Error(Errc::SpecMismatch, "true_weights",
                "true_weights length " + std::to_string(spec.true_weights.size()) +
                    " does not match feature count " + std::to_string(schema.size()));
  }
  for (const auto& f : spec.features) {
    if (!(f.noise_stddev >= 0.0) || !std::isfinite(f.base) || !std::isfinite(f.drift_per_step)) {
      throw Error(Errc::SpecMismatch, "features", "feature generator parameters out of range");
    }
  }
  if (!(spec.anomaly.probability >= 0.0 && spec.anomaly.probability <= 1.0)) {
    throw Error(Errc::SpecMismatch, "anomaly.probability", "anomaly probability must be in [0, 1]");
  }
  if (!(spec.anomaly.magnitude_stddev_multiplier > 0.0)) {
    throw Error(Errc::SpecMismatch, "anomaly.magnitude_stddev_multiplier",
                "anomaly multiplier must be positive");
  }
  if (!(spec.target_noise_stddev >= 0.0)) {
    throw Error(Errc::SpecMismatch, "target_noise_stddev", "target noise must be non-negative");
  }
}

SensorSimulator::SensorSimulator(SensorSimSpec spec, const FeatureSchema& schema)
    : spec_(std::move(spec)), target_dims_(schema.size()), rng_(spec_.seed)
{
  check_sim_spec(spec_, schema);
}

SensorSimulator::Step SensorSimulator::next()
{
  // Uniform and normal draws are made from raw engine output so sequences
  // depend only on the seed and the step count.
  auto uniform = [this] { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; };
  auto standard_normal = [&] {
    // Box-Muller; u1 is kept away from 0.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };

  Step step;
  step.index = t_;
  step.anomalous = uniform() < spec_.anomaly.probability;
  const double scale = step.anomalous ? spec_.anomaly.magnitude_stddev_multiplier : 1.0;
  step.true_features.resize(target_dims_);
  step.observed_features.resize(target_dims_);
  step.true_target = spec_.true_bias;
  for (std::size_t i = 0; i < target_dims_; ++i) {
    const auto& gen = spec_.features[i];
    const double x = gen.base + standard_normal() * gen.noise_stddev * scale;
    step.true_features[i] = x;
    step.observed_features[i] = x + gen.drift_per_step * static_cast<double>(drift_hold_.value_or(t_));
    step.true_target += spec_.true_weights[i] * x;
  }
  step.target = step.true_target + standard_normal() * spec_.target_noise_stddev;
  ++t_;
  return step;
}

Observation SensorSimulator::observation(const Step& step) const
{
  Observation observation;
  observation.ts_ms = step.index;
  observation.values.assign(step.observed_features.begin(), step.observed_features.end());
  observation.target = step.target;
  return observation;
}

ReplayReport stream_sensor(const SensorSimSpec& spec, const FeatureSchema& schema,
                           BusSession& session, const std::string& topic, std::int64_t n_steps,
                           const StreamOptions& options)
{
  SensorSimulator simulator(spec, schema);
  ReplayReport report;
  const auto start = std::chrono::steady_clock::now();
  const bool paced = options.rate_hz > 0.0;
  const auto period = std::chrono::duration<double>(paced ? 1.0 / options.rate_hz : 0.0);
  for (std::int64_t t = 0; t < n_steps; ++t) {
    if (options.stop != nullptr && options.stop->load()) {
      break;
    }
    if (paced) {
      std::this_thread::sleep_until(
          start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      period * static_cast<double>(t)));
    }
    const auto step = simulator.next();
    InputMessage message;
    message.observation = simulator.observation(step);
    message.row_id = next_row_id();
    message.ingest_us = monotonic_us();
    session.publish(topic, encode_input(message, schema));
    ++report.rows_sent;
  }
  report.duration =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
  return report;
}

Dataset generate_training_data(const SensorSimSpec& spec, const FeatureSchema& schema,
                               std::size_t n)
{
  SensorSimulator simulator(spec, schema);
  Dataset dataset;
  dataset.feature_names = schema.names();
  for (std::size_t i = 0; i < n; ++i) {
    auto step = simulator.next();
    dataset.add(std::move(step.observed_features), step.target);
  }
  return dataset;
}

Dataset read_dataset_csv(const std::filesystem::path& path, const FeatureSchema& schema)
{
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::FileNotFound, path.string(), "cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(Errc::HeaderMismatch, path.string(), "CSV file has no header row");
  }
  const CsvLayout layout = CsvLayout::from_header(line, schema);
  Dataset dataset;
  dataset.feature_names = schema.names();
  std::size_t skipped = 0;
  while (std::getline(in, line)) {
    if (is_blank(line)) {
      continue;
    }
    try {
      const Observation observation = parse_csv_row(line, layout, schema);
      if (!observation.target) {
        ++skipped;
        continue;
      }
      std::vector<double> x;
      x.reserve(observation.values.size());
      for (const auto& value : observation.values) {
        x.push_back(value.value_or(std::numeric_limits<double>::quiet_NaN()));
      }
      dataset.add(std::move(x), *observation.target);
    } catch (const Error&) {
      ++skipped;
    }
  }
  if (skipped > 0) {
    log()->warn("{}: skipped {} rows without a valid target", path.string(), skipped);
  }
  return dataset;
}

void write_dataset_csv(const Dataset& data, const std::string& target_name,
                       const std::filesystem::path& path)
{
  auto cell = [](double value) {
    if (std::isnan(value)) {
      return std::string();
    }
    char buffer[64];
    const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
    return ec == std::errc() ? std::string(buffer, ptr) : std::string();
  };
  std::ofstream out(path);
  if (!out) {
    throw Error(Errc::FileNotFound, path.string(), "cannot write " + path.string());
  }
  for (const auto& name : data.feature_names) {
    out << name << ',';
  }
  out << target_name << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (double v : data.x[r]) {
      out << cell(v) << ',';
    }
    out << cell(data.y[r]) << '\n';
  }
}

}  // namespace edgeai
