// Command line front end. All real work lives in the library; this file
// only maps flags onto PipelineConfig and exceptions onto exit codes.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "audience/errors.hpp"
#include "audience/pipeline.hpp"

namespace {

using audience::PipelineConfig;

struct CliArgs {
  std::string config_path;
  std::string events;
  std::string output_dir;
  double grain_days = 0.0;
  double horizon_days = 0.0;
  std::uint64_t seed = 0;
  int threads = 0;
  // rank
  std::int64_t reach = 0;
  std::string category;
  // simulate
  std::string model_path;
  int users = -1;
  double promo_rate = 0.0;
  int resellers = 0;
};

void add_common(CLI::App* sub, CliArgs& args) {
  sub->add_option("--config", args.config_path, "pipeline config (json)");
  sub->add_option("--events", args.events, "input event file (csv or jsonl)");
  sub->add_option("--output-dir", args.output_dir, "artifact directory");
  sub->add_option("--grain-days", args.grain_days, "count cell width in days");
  sub->add_option("--horizon-days", args.horizon_days, "history span in days");
  sub->add_option("--seed", args.seed, "master seed");
  sub->add_option("--threads", args.threads, "worker threads (0 = hardware)");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw audience::DataError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int fail(const char* type, const std::string& message, int code) {
  nlohmann::json j;
  j["error"] = {{"type", type}, {"message", message}};
  std::cerr << j.dump() << "\n";
  return code;
}

int run(int argc, char** argv) {
  CLI::App app{"batch audience construction from purchase logs"};
  app.require_subcommand(1);
  CliArgs args;

  CLI::App* stats = app.add_subcommand("stats", "descriptive statistics of an event file");
  CLI::App* preprocess = app.add_subcommand("preprocess", "promotion and reseller filtering");
  CLI::App* estimate = app.add_subcommand("estimate", "fit base rates, kernels, and the excitation network");
  CLI::App* infer = app.add_subcommand("infer", "score every user-category pair from a fitted model");
  CLI::App* rank = app.add_subcommand("rank", "cut top-k audiences from inferred intensities");
  CLI::App* simulate = app.add_subcommand("simulate", "generate synthetic purchase logs from a ground-truth model");
  CLI::App* evaluate = app.add_subcommand("evaluate", "segmented precision/recall against baselines");
  CLI::App* pipeline = app.add_subcommand("pipeline", "preprocess, estimate, infer, rank, and evaluate in one run");
  for (CLI::App* sub : {stats, preprocess, estimate, infer, rank, simulate, evaluate, pipeline}) {
    add_common(sub, args);
  }
  rank->add_option("--reach", args.reach, "audience size");
  rank->add_option("--category", args.category, "restrict to one category id");
  simulate->add_option("--model", args.model_path, "ground-truth model (json)")->required();
  simulate->add_option("--users", args.users, "override the model's user count");
  simulate->add_option("--promo-rate", args.promo_rate, "fraction of events flagged promotional");
  simulate->add_option("--resellers", args.resellers, "synthetic bulk-buyer accounts to inject");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    return fail("validation", e.what(), audience::kExitValidation);
  }

  CLI::App* sub = app.get_subcommands().at(0);
  PipelineConfig config;
  if (sub->count("--config") > 0) {
    config = audience::config_from_json(read_file(args.config_path));
  }
  if (sub->count("--events") > 0) config.events = args.events;
  if (sub->count("--output-dir") > 0) config.output_dir = args.output_dir;
  if (sub->count("--grain-days") > 0) config.grain_days = args.grain_days;
  if (sub->count("--horizon-days") > 0) config.horizon_days = args.horizon_days;
  if (sub->count("--seed") > 0) config.seed = args.seed;
  if (sub->count("--threads") > 0) config.threads = args.threads;

  const std::string& name = sub->get_name();
  if (name == "stats") {
    audience::run_stats(config);
  } else if (name == "preprocess") {
    audience::run_preprocess(config);
  } else if (name == "estimate") {
    audience::run_estimate(config);
  } else if (name == "infer") {
    audience::run_infer(config);
  } else if (name == "rank") {
    const std::int64_t reach = sub->count("--reach") > 0 ? args.reach : config.reach;
    audience::run_rank(config, reach, args.category);
  } else if (name == "simulate") {
    audience::run_simulate(config, args.model_path, args.users, args.promo_rate,
                           args.resellers);
  } else if (name == "evaluate") {
    audience::run_evaluate(config);
  } else {
    audience::run_pipeline(config);
  }
  return audience::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const audience::ValidationError& e) {
    return fail("validation", e.what(), audience::kExitValidation);
  } catch (const audience::DataError& e) {
    return fail("data", e.what(), audience::kExitData);
  } catch (const audience::NumericalError& e) {
    return fail("numerical", e.what(), audience::kExitNumerical);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}
