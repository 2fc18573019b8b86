#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audience/estimation.hpp"
#include "audience/evaluate.hpp"
#include "audience/events.hpp"
#include "audience/kernels.hpp"

namespace audience {

/// Every tunable in one place. Defaults run the full pipeline with the
/// standard constants: daily grain, 180-day history, 9-day prediction
/// window, 10-day attribution, 10-in-7 velocity rule, smoothing 3/0.1,
/// 5 mixture components.
struct PipelineConfig {
  std::string events;       // input event file (csv or jsonl)
  std::string output_dir = ".";

  double grain_days = 1.0;        // g
  double horizon_days = 180.0;    // history span covered by count cells
  double prediction_days = 9.0;   // audience evaluation window

  bool filter_promotions = true;
  int reseller_threshold = 10;
  double reseller_window_days = 7.0;
  double attribution_window_days = 10.0;

  double alpha_s = 3.0;
  double beta_s = 0.1;
  int mixture_components = 5;
  int min_pair_samples = 30;
  std::string estimator = "lmkv";  // network applied at inference: mkv | lmkv

  std::vector<double> reach_multipliers = {5.0, 10.0, 20.0};
  int segments = 7;
  double test_days = 60.0;

  std::int64_t reach = 1000;  // audience size for the rank stage
  std::uint64_t seed = 1;
  int threads = 1;  // 0 resolves to the hardware count

  int count_cells() const;  // horizon / grain, validated integral
};

/// Strict parse: unknown keys are rejected so typos cannot silently fall
/// back to defaults.
PipelineConfig config_from_json(const std::string& text);
std::string config_to_json(const PipelineConfig& config);
/// Stable 16-hex-digit digest of the canonical JSON form.
std::string config_hash(const PipelineConfig& config);
void validate_config(const PipelineConfig& config);

/// Estimated model bundle: everything inference needs.
struct Model {
  BaseIntensities base;
  LatentNetwork network;  // the estimator chosen by the config
  KernelBank kernels;
  std::vector<std::string> category_ids;
};

std::string model_bundle_to_json(const Model& model);
Model model_bundle_from_json(const std::string& text);

/// The full estimation stack as an evaluation method: per segment it
/// re-runs matching, kernel fits, and network estimation on the truncated
/// view, then scores every user by quantized intensity at the segment start.
ExperimentMethod make_hawkes_method(const PipelineConfig& config);
/// top, top45, mf, and the repeat-rate baseline, under their table names.
std::vector<ExperimentMethod> make_baseline_methods(const PipelineConfig& config);

/// Stage runners behind the CLI subcommands. Each writes its artifacts and
/// a JSON manifest (inputs, config hash, timings) into output_dir.
void run_stats(const PipelineConfig& config);
void run_preprocess(const PipelineConfig& config);
void run_estimate(const PipelineConfig& config);
void run_infer(const PipelineConfig& config);
void run_rank(const PipelineConfig& config, std::int64_t reach,
              const std::string& category_id = "");
void run_simulate(const PipelineConfig& config, const std::string& model_path,
                  int users_override = -1, double promo_rate = 0.0,
                  int resellers = 0);
void run_evaluate(const PipelineConfig& config);
void run_pipeline(const PipelineConfig& config);

}  // namespace audience
