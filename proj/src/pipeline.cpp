#include "audience/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "audience/inference.hpp"
#include "audience/preprocess.hpp"
#include "audience/simulate.hpp"

namespace audience {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("short write to " + path);
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::string artifact_path(const PipelineConfig& config, const std::string& name) {
  return (fs::path(config.output_dir) / name).string();
}

void write_manifest(const PipelineConfig& config, const std::string& stage,
                    json inputs, json outputs, double total_ms,
                    json extra = json::object()) {
  json m;
  m["stage"] = stage;
  m["config_hash"] = config_hash(config);
  m["seed"] = config.seed;
  m["inputs"] = std::move(inputs);
  m["outputs"] = std::move(outputs);
  m["timings_ms"] = {{"total", total_ms}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text(artifact_path(config, stage + ".manifest.json"), m.dump(2) + "\n");
}

BehavioralLog load_events(const PipelineConfig& config, IngestReport* report) {
  if (config.events.empty()) {
    throw ValidationError("no input events file configured (set 'events')");
  }
  return ingest_file(config.events, {}, report);
}

struct Filtered {
  BehavioralLog log;
  std::set<std::string> removed_users;
  std::size_t promo_events_removed = 0;
};

Filtered apply_filters(const BehavioralLog& log, const PipelineConfig& config) {
  Filtered f;
  const std::size_t before = log.event_count();
  BehavioralLog organic = config.filter_promotions ? filter_promotions(log) : log;
  f.promo_events_removed = before - organic.event_count();
  ResellerFilter rf = filter_resellers(organic, config.reseller_threshold,
                                       config.reseller_window_days);
  f.log = std::move(rf.log);
  f.removed_users = std::move(rf.removed_users);
  return f;
}

Model estimate_model(const BehavioralLog& clean, const PipelineConfig& config,
                     std::vector<std::string>* warnings) {
  Model model;
  model.category_ids = clean.categories.ids();
  const MatchingMap matchings =
      all_matchings(clean, config.attribution_window_days, config.threads);
  model.base = estimate_base_intensity(clean);

  KernelEstimationOptions ko;
  ko.mixture_components = config.mixture_components;
  ko.min_samples = config.min_pair_samples;
  ko.seed = config.seed;
  ko.threads = config.threads;
  model.kernels = estimate_kernels(clean, matchings, ko);

  const LatentNetwork mkv =
      estimate_network_mkv(clean, matchings, config.alpha_s, config.beta_s);
  model.network = config.estimator == "lmkv"
                      ? lift_network(mkv, category_totals(clean), 1e6, warnings)
                      : mkv;
  return model;
}

std::vector<CountMatrix> recent_counts(const BehavioralLog& log,
                                       const PipelineConfig& config, double tick) {
  const int cells = config.count_cells();
  std::vector<CountMatrix> counts;
  counts.reserve(log.category_count());
  for (int cp = 0; cp < log.category_count(); ++cp) {
    counts.push_back(count_matrix(log, cp, config.grain_days, cells, tick));
  }
  return counts;
}

IntensityMatrix infer_now(const BehavioralLog& clean, const Model& model,
                          const PipelineConfig& config, double tick) {
  const PrecomputeBank pre = build_precompute(
      model.network, model.kernels, config.grain_days, config.count_cells());
  return infer_intensities(model.base, pre, recent_counts(clean, config, tick),
                           clean.user_ids, config.threads);
}

std::string safe_name(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  }
  return out;
}

}  // namespace

int PipelineConfig::count_cells() const {
  if (!(grain_days > 0.0)) throw ValidationError("grain_days must be positive");
  const double cells = horizon_days / grain_days;
  const long long rounded = std::llround(cells);
  if (rounded < 1 || std::abs(cells - static_cast<double>(rounded)) > 1e-9) {
    throw ValidationError("horizon_days must be a positive integer multiple of grain_days");
  }
  return static_cast<int>(rounded);
}

void validate_config(const PipelineConfig& config) {
  config.count_cells();
  if (!(config.prediction_days > 0.0)) {
    throw ValidationError("prediction_days must be positive");
  }
  if (config.reseller_threshold < 1) {
    throw ValidationError("reseller_threshold must be at least 1");
  }
  if (!(config.reseller_window_days > 0.0)) {
    throw ValidationError("reseller_window_days must be positive");
  }
  if (!(config.attribution_window_days > 0.0)) {
    throw ValidationError("attribution_window_days must be positive");
  }
  if (config.alpha_s < 0.0) throw ValidationError("alpha_s must be non-negative");
  if (!(config.beta_s > 0.0)) throw ValidationError("beta_s must be positive");
  if (config.mixture_components < 1) {
    throw ValidationError("mixture_components must be at least 1");
  }
  if (config.min_pair_samples < 2) {
    throw ValidationError("min_pair_samples must be at least 2");
  }
  if (config.estimator != "mkv" && config.estimator != "lmkv") {
    throw ValidationError("estimator must be 'mkv' or 'lmkv'");
  }
  if (config.reach_multipliers.empty()) {
    throw ValidationError("reach_multipliers must not be empty");
  }
  for (double k : config.reach_multipliers) {
    if (!(k > 0.0)) throw ValidationError("reach multipliers must be positive");
  }
  if (config.segments < 1) throw ValidationError("segments must be at least 1");
  if (config.test_days < 0.0) throw ValidationError("test_days must be non-negative");
  if (config.reach < 1) throw ValidationError("reach must be at least 1");
  if (config.threads < 0) throw ValidationError("threads must be non-negative");
}

PipelineConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad config json: ") + e.what());
  }
  PipelineConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "events") c.events = value.get<std::string>();
      else if (key == "output_dir") c.output_dir = value.get<std::string>();
      else if (key == "grain_days") c.grain_days = value.get<double>();
      else if (key == "horizon_days") c.horizon_days = value.get<double>();
      else if (key == "prediction_days") c.prediction_days = value.get<double>();
      else if (key == "filter_promotions") c.filter_promotions = value.get<bool>();
      else if (key == "reseller_threshold") c.reseller_threshold = value.get<int>();
      else if (key == "reseller_window_days") c.reseller_window_days = value.get<double>();
      else if (key == "attribution_window_days") c.attribution_window_days = value.get<double>();
      else if (key == "alpha_s") c.alpha_s = value.get<double>();
      else if (key == "beta_s") c.beta_s = value.get<double>();
      else if (key == "mixture_components") c.mixture_components = value.get<int>();
      else if (key == "min_pair_samples") c.min_pair_samples = value.get<int>();
      else if (key == "estimator") c.estimator = value.get<std::string>();
      else if (key == "reach_multipliers") c.reach_multipliers = value.get<std::vector<double>>();
      else if (key == "segments") c.segments = value.get<int>();
      else if (key == "test_days") c.test_days = value.get<double>();
      else if (key == "reach") c.reach = value.get<std::int64_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "threads") c.threads = value.get<int>();
      else throw ValidationError("unknown config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
  validate_config(c);
  return c;
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["events"] = c.events;
  j["output_dir"] = c.output_dir;
  j["grain_days"] = c.grain_days;
  j["horizon_days"] = c.horizon_days;
  j["prediction_days"] = c.prediction_days;
  j["filter_promotions"] = c.filter_promotions;
  j["reseller_threshold"] = c.reseller_threshold;
  j["reseller_window_days"] = c.reseller_window_days;
  j["attribution_window_days"] = c.attribution_window_days;
  j["alpha_s"] = c.alpha_s;
  j["beta_s"] = c.beta_s;
  j["mixture_components"] = c.mixture_components;
  j["min_pair_samples"] = c.min_pair_samples;
  j["estimator"] = c.estimator;
  j["reach_multipliers"] = c.reach_multipliers;
  j["segments"] = c.segments;
  j["test_days"] = c.test_days;
  j["reach"] = c.reach;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j.dump(2);
}

std::string config_hash(const PipelineConfig& config) {
  const std::string text = config_to_json(config);
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string model_bundle_to_json(const Model& model) {
  json j;
  j["category_ids"] = model.category_ids;
  j["base"] = {{"span_days", model.base.span_days}, {"mu0", model.base.mu0}};
  j["network"] = json::parse(network_to_json(model.network));
  j["kernels"] = json::parse(kernel_bank_to_json(model.kernels));
  return j.dump(2);
}

Model model_bundle_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model json: ") + e.what());
  }
  Model model;
  model.category_ids = j.at("category_ids").get<std::vector<std::string>>();
  model.base.span_days = j.at("base").at("span_days").get<double>();
  model.base.mu0 = j.at("base").at("mu0").get<std::vector<double>>();
  model.network = network_from_json(j.at("network").dump());
  model.kernels = kernel_bank_from_json(j.at("kernels").dump());
  const int cats = static_cast<int>(model.category_ids.size());
  if (static_cast<int>(model.base.mu0.size()) != cats ||
      model.network.categories != cats || model.kernels.categories != cats) {
    throw DataError("model pieces disagree on the category count");
  }
  return model;
}

ExperimentMethod make_hawkes_method(const PipelineConfig& config) {
  ExperimentMethod m;
  m.name = "hawkes";
  m.score = [config](const BehavioralLog& view, double t) {
    Model model = estimate_model(view, config, nullptr);
    return infer_now(view, model, config, t);
  };
  return m;
}

std::vector<ExperimentMethod> make_baseline_methods(const PipelineConfig& config) {
  std::vector<ExperimentMethod> methods;
  methods.push_back(
      {"top", [](const BehavioralLog& view, double t) {
         return baseline_top(view, t, std::numeric_limits<double>::infinity());
       }});
  methods.push_back({"top45", [](const BehavioralLog& view, double t) {
                       return baseline_top(view, t, 45.0);
                     }});
  methods.push_back({"mf", [config](const BehavioralLog& view, double t) {
                       MfOptions mo;
                       mo.seed = config.seed;
                       return baseline_mf(count_snapshot(view, t), view.user_ids,
                                          view.category_count(), t, mo);
                     }});
  methods.push_back({"repeat", [config](const BehavioralLog& view, double t) {
                       return baseline_buy_it_again(view, t, config.prediction_days);
                     }});
  return methods;
}

void run_stats(const PipelineConfig& config) {
  validate_config(config);
  StageTimer timer;
  fs::create_directories(config.output_dir);
  IngestReport report;
  const BehavioralLog log = load_events(config, &report);
  const StatsReport stats = log_stats(log);
  const std::string out = artifact_path(config, "stats.json");
  write_text(out, stats_to_json(stats, log) + "\n");
  write_manifest(config, "stats", {{"events", config.events}}, {out},
                 timer.elapsed_ms(),
                 {{"rows_read", report.rows_read},
                  {"rows_skipped", report.rows_skipped}});
}

void run_preprocess(const PipelineConfig& config) {
  validate_config(config);
  StageTimer timer;
  fs::create_directories(config.output_dir);
  IngestReport report;
  const BehavioralLog log = load_events(config, &report);
  Filtered f = apply_filters(log, config);

  const std::string clean_path = artifact_path(config, "events_clean.csv");
  {
    std::ofstream out(clean_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + clean_path);
    write_events_csv(f.log, out);
  }
  json removed = json::array();
  for (const auto& u : f.removed_users) removed.push_back(u);
  const std::string removed_path = artifact_path(config, "removed_users.json");
  write_text(removed_path, removed.dump(2) + "\n");

  write_manifest(config, "preprocess", {{"events", config.events}},
                 {clean_path, removed_path}, timer.elapsed_ms(),
                 {{"rows_read", report.rows_read},
                  {"rows_skipped", report.rows_skipped},
                  {"promo_events_removed", f.promo_events_removed},
                  {"resellers_removed", f.removed_users.size()}});
}

void run_estimate(const PipelineConfig& config) {
  validate_config(config);
  StageTimer timer;
  fs::create_directories(config.output_dir);
  IngestReport report;
  const BehavioralLog log = load_events(config, &report);
  Filtered f = apply_filters(log, config);

  std::vector<std::string> warnings;
  const Model model = estimate_model(f.log, config, &warnings);
  const std::string model_path = artifact_path(config, "model.json");
  write_text(model_path, model_bundle_to_json(model) + "\n");

  const std::string network_csv = artifact_path(config, "network.csv");
  {
    std::ofstream out(network_csv, std::ios::binary);
    if (!out) throw DataError("cannot write " + network_csv);
    network_to_csv(model.network, out);
  }
  write_manifest(config, "estimate", {{"events", config.events}},
                 {model_path, network_csv}, timer.elapsed_ms(),
                 {{"rows_skipped", report.rows_skipped},
                  {"resellers_removed", f.removed_users.size()},
                  {"warnings", warnings}});
}

void run_infer(const PipelineConfig& config) {
  validate_config(config);
  StageTimer timer;
  fs::create_directories(config.output_dir);
  const BehavioralLog log = load_events(config, nullptr);
  Filtered f = apply_filters(log, config);
  const std::string model_path = artifact_path(config, "model.json");
  const Model model = model_bundle_from_json(read_text(model_path));
  if (static_cast<int>(model.category_ids.size()) != f.log.category_count()) {
    throw DataError("model was estimated on a different category universe");
  }

  const IntensityMatrix lambda = infer_now(f.log, model, config, f.log.window_days);

  const std::string bin_path = artifact_path(config, "lambda.bin");
  {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + bin_path);
    write_intensities(lambda, out);
  }
  const std::string csv_path = artifact_path(config, "lambda.csv");
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + csv_path);
    intensities_to_csv(lambda, f.log.categories, out);
  }
  write_manifest(config, "infer",
                 {{"events", config.events}, {"model", model_path}},
                 {bin_path, csv_path}, timer.elapsed_ms());
}

void run_rank(const PipelineConfig& config, std::int64_t reach,
              const std::string& category_id) {
  validate_config(config);
  if (reach < 1) throw ValidationError("reach must be at least 1");
  StageTimer timer;
  fs::create_directories(config.output_dir);

  const std::string lambda_path = artifact_path(config, "lambda.bin");
  std::ifstream in(lambda_path, std::ios::binary);
  if (!in) throw DataError("cannot open " + lambda_path + "; run infer first");
  const IntensityMatrix lambda = read_intensities(in);

  const std::string model_path = artifact_path(config, "model.json");
  const Model model = model_bundle_from_json(read_text(model_path));
  if (static_cast<int>(model.category_ids.size()) != lambda.categories) {
    throw DataError("intensity matrix and model disagree on categories");
  }

  std::vector<int> targets;
  if (category_id.empty()) {
    for (int c = 0; c < lambda.categories; ++c) targets.push_back(c);
  } else {
    const auto it = std::find(model.category_ids.begin(), model.category_ids.end(),
                              category_id);
    if (it == model.category_ids.end()) {
      throw ValidationError("unknown category id: " + category_id);
    }
    targets.push_back(static_cast<int>(it - model.category_ids.begin()));
  }

  json outputs = json::array();
  json warnings = json::array();
  for (int c : targets) {
    const Audience audience = rank_audience(lambda, c, reach);
    if (!audience.warning.empty()) warnings.push_back(audience.warning);
    const std::string path = artifact_path(
        config, "audience_" + safe_name(model.category_ids[c]) + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    audience_to_csv(audience, out);
    outputs.push_back(path);
  }
  write_manifest(config, "rank", {{"lambda", lambda_path}, {"model", model_path}},
                 std::move(outputs), timer.elapsed_ms(),
                 {{"reach", reach}, {"warnings", warnings}});
}

void run_simulate(const PipelineConfig& config, const std::string& model_path,
                  int users_override, double promo_rate, int resellers) {
  validate_config(config);
  StageTimer timer;
  fs::create_directories(config.output_dir);
  GroundTruthModel model = model_from_json(read_text(model_path));
  if (users_override >= 0) model.users = users_override;

  SimulateOptions so;
  so.seed = config.seed;
  so.threads = config.threads;
  BehavioralLog log = simulate_logs(model, so);
  if (promo_rate > 0.0 || resellers > 0) {
    log = inject_noise(log, promo_rate, resellers, config.seed + 1);
  }

  const std::string out_path = artifact_path(config, "events_sim.csv");
  {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + out_path);
    write_events_csv(log, out);
  }
  write_manifest(config, "simulate", {{"model", model_path}}, {out_path},
                 timer.elapsed_ms(),
                 {{"users", model.users},
                  {"events", log.event_count()},
                  {"promo_rate", promo_rate},
                  {"resellers", resellers}});
}

void run_evaluate(const PipelineConfig& config) {
  validate_config(config);
  StageTimer timer;
  fs::create_directories(config.output_dir);
  const BehavioralLog log = load_events(config, nullptr);
  Filtered f = apply_filters(log, config);

  EvalProtocol protocol = split_protocol(f.log, config.test_days,
                                         config.prediction_days, config.segments);
  protocol.reach_multipliers = config.reach_multipliers;

  std::vector<ExperimentMethod> methods;
  methods.push_back(make_hawkes_method(config));
  for (auto& m : make_baseline_methods(config)) methods.push_back(std::move(m));

  ExperimentOptions eo;
  eo.threads = config.threads;
  const ExperimentResult result = run_experiment(f.log, protocol, methods, eo);

  const std::string metrics_path = artifact_path(config, "metrics.csv");
  {
    std::ofstream out(metrics_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + metrics_path);
    metrics_to_csv(result, out);
  }
  const std::string summary_path = artifact_path(config, "summary.txt");
  {
    std::ofstream out(summary_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + summary_path);
    print_summary(result, out);
  }
  print_summary(result, std::cout);

  write_manifest(config, "evaluate", {{"events", config.events}},
                 {metrics_path, summary_path}, timer.elapsed_ms(),
                 {{"train_violations", result.train_violations},
                  {"segments", protocol.segments}});
}

void run_pipeline(const PipelineConfig& config) {
  validate_config(config);
  StageTimer timer;
  fs::create_directories(config.output_dir);
  run_preprocess(config);
  run_estimate(config);
  run_infer(config);
  run_rank(config, config.reach, "");
  run_evaluate(config);
  write_manifest(config, "pipeline", {{"events", config.events}}, json::array(),
                 timer.elapsed_ms());
}

}  // namespace audience
