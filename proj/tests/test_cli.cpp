#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "audience/pipeline.hpp"
#include "audience/simulate.hpp"

using namespace audience;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Runs the installed binary with stdout/stderr captured in `dir`.
CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out_path = dir / "stdout.txt";
  const fs::path err_path = dir / "stderr.txt";
  const std::string cmd = std::string(AUDIENCE_CLI_PATH) + " " + args + " >" +
                          out_path.string() + " 2>" + err_path.string();
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path("cli_scratch") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_type(const std::string& stderr_text) {
  const auto j = nlohmann::json::parse(stderr_text);
  return j.at("error").at("type").get<std::string>();
}

/// Small two-category model with enough self-excitation for repeat buys.
void write_model(const fs::path& path, int users) {
  GroundTruthModel model;
  model.users = users;
  model.horizon_days = 120.0;
  model.mu0 = {0.03, 0.02};
  model.category_ids = {"beer", "diapers"};
  model.network.categories = 2;
  model.network.estimator = "ground-truth";
  model.network.beta = {0.4, 0.0, 0.2, 0.4};
  model.kernels = KernelBank::uniform(2, WeibullKernel{5.0, 1.0}, "ground-truth");
  model.kernels.at(0, 0) = MixtureOfWeibulls{{{12.0, 3.0, 1.0}}};
  model.kernels.at(1, 1) = MixtureOfWeibulls{{{20.0, 3.0, 1.0}}};
  model.kernels.at(1, 0) = WeibullKernel{4.0, 2.0};
  std::ofstream out(path);
  out << model_to_json(model);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help exits clean and names every stage") {
  const fs::path dir = scratch("help");
  CliResult top = run_cli("--help", dir);
  CHECK(top.exit_code == 0);
  for (const char* sub : {"stats", "preprocess", "estimate", "infer", "rank",
                          "simulate", "evaluate", "pipeline"}) {
    CHECK(top.out.find(sub) != std::string::npos);
  }
  CliResult sub = run_cli("rank --help", dir);
  CHECK(sub.exit_code == 0);
  CHECK(sub.out.find("--reach") != std::string::npos);
}

TEST_CASE("failures map to typed exit codes and json errors") {
  const fs::path dir = scratch("errors");

  CliResult unknown = run_cli("frobnicate", dir);
  CHECK(unknown.exit_code == 2);

  CliResult missing = run_cli(
      "stats --events " + (dir / "no_such.csv").string() + " --output-dir " +
          dir.string(),
      dir);
  CHECK(missing.exit_code == 3);
  CHECK(error_type(missing.err) == "data");

  std::ofstream(dir / "bad_config.json") << "{\"bogus\": 1}";
  CliResult bad_key = run_cli(
      "stats --config " + (dir / "bad_config.json").string(), dir);
  CHECK(bad_key.exit_code == 2);
  CHECK(error_type(bad_key.err) == "validation");
  CHECK(bad_key.err.find("bogus") != std::string::npos);

  std::ofstream(dir / "events.csv")
      << "user_id,item_id,category_id,timestamp,price,promo_flag\n"
         "u1,i1,beer,1.5,,0\n";
  CliResult bad_grain = run_cli(
      "stats --events " + (dir / "events.csv").string() + " --output-dir " +
          dir.string() + " --grain-days -1",
      dir);
  CHECK(bad_grain.exit_code == 2);
  CHECK(error_type(bad_grain.err) == "validation");
}

TEST_CASE("the stage chain leaves artifacts and manifests behind") {
  const fs::path dir = scratch("chain");
  write_model(dir / "gt.json", 70);

  CliResult sim = run_cli("simulate --model " + (dir / "gt.json").string() +
                              " --output-dir " + dir.string() +
                              " --seed 5 --promo-rate 0.1 --resellers 2",
                          dir);
  REQUIRE(sim.exit_code == 0);
  REQUIRE(fs::exists(dir / "events_sim.csv"));
  REQUIRE(fs::exists(dir / "simulate.manifest.json"));

  const std::string events = (dir / "events_sim.csv").string();
  CliResult stats = run_cli(
      "stats --events " + events + " --output-dir " + dir.string(), dir);
  REQUIRE(stats.exit_code == 0);
  CHECK(fs::exists(dir / "stats.json"));

  CliResult pre = run_cli(
      "preprocess --events " + events + " --output-dir " + dir.string(), dir);
  REQUIRE(pre.exit_code == 0);
  REQUIRE(fs::exists(dir / "events_clean.csv"));
  CHECK(fs::exists(dir / "removed_users.json"));
  // both injected resellers come back out
  const auto removed = nlohmann::json::parse(slurp(dir / "removed_users.json"));
  CHECK(removed.size() == 2);

  const std::string clean = (dir / "events_clean.csv").string();
  const std::string span = " --grain-days 1 --horizon-days 30";
  CliResult est = run_cli("estimate --events " + clean + " --output-dir " +
                              dir.string() + span,
                          dir);
  REQUIRE(est.exit_code == 0);
  REQUIRE(fs::exists(dir / "model.json"));
  CHECK(fs::exists(dir / "network.csv"));

  CliResult inf = run_cli("infer --events " + clean + " --output-dir " +
                              dir.string() + span,
                          dir);
  REQUIRE(inf.exit_code == 0);
  REQUIRE(fs::exists(dir / "lambda.bin"));
  CHECK(fs::exists(dir / "lambda.csv"));

  CliResult rank = run_cli("rank --events " + clean + " --output-dir " +
                               dir.string() + span + " --reach 10",
                           dir);
  REQUIRE(rank.exit_code == 0);
  CHECK(fs::exists(dir / "audience_beer.csv"));
  CHECK(fs::exists(dir / "audience_diapers.csv"));
  const std::string audience = slurp(dir / "audience_beer.csv");
  CHECK(audience.rfind("rank,user_id,score\n", 0) == 0);
  // header plus the requested ten members
  CHECK(std::count(audience.begin(), audience.end(), '\n') == 11);

  // reach is validated after the artifacts are in place, so the failure is
  // the argument, not a missing file
  CliResult zero = run_cli("rank --events " + clean + " --output-dir " +
                               dir.string() + span + " --reach 0",
                           dir);
  CHECK(zero.exit_code == 2);
  CHECK(error_type(zero.err) == "validation");

  // one category by name, unknown names rejected
  CliResult one = run_cli("rank --events " + clean + " --output-dir " +
                              dir.string() + span +
                              " --reach 5 --category beer",
                          dir);
  CHECK(one.exit_code == 0);
  CliResult bogus = run_cli("rank --events " + clean + " --output-dir " +
                                dir.string() + span +
                                " --reach 5 --category tofu",
                            dir);
  CHECK(bogus.exit_code == 2);

  const auto manifest = nlohmann::json::parse(slurp(dir / "estimate.manifest.json"));
  CHECK(manifest.at("stage") == "estimate");
  CHECK(manifest.at("seed") == 1);
  CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
  CHECK(!manifest.at("outputs").empty());
  CHECK(manifest.at("timings_ms").contains("total"));
}

TEST_CASE("the pipeline command runs every stage end to end") {
  const fs::path dir = scratch("pipeline");
  write_model(dir / "gt.json", 50);
  REQUIRE(run_cli("simulate --model " + (dir / "gt.json").string() +
                      " --output-dir " + dir.string() + " --seed 11",
                  dir)
              .exit_code == 0);

  nlohmann::json cfg;
  cfg["events"] = (dir / "events_sim.csv").string();
  cfg["output_dir"] = dir.string();
  cfg["grain_days"] = 1.0;
  cfg["horizon_days"] = 30.0;
  cfg["min_pair_samples"] = 25;
  cfg["mixture_components"] = 2;
  cfg["segments"] = 3;
  cfg["test_days"] = 27.0;
  cfg["reach"] = 12;
  cfg["seed"] = 11;
  std::ofstream(dir / "config.json") << cfg.dump(2);

  CliResult run = run_cli("pipeline --config " + (dir / "config.json").string(), dir);
  REQUIRE(run.exit_code == 0);
  for (const char* artifact :
       {"events_clean.csv", "model.json", "lambda.bin", "audience_beer.csv",
        "metrics.csv", "summary.txt", "pipeline.manifest.json"}) {
    CHECK(fs::exists(dir / artifact));
  }
  // the evaluation table lands on stdout and holds every method
  for (const char* method : {"hawkes", "top", "top45", "mf", "repeat"}) {
    CHECK(run.out.find(method) != std::string::npos);
  }
  const std::string metrics = slurp(dir / "metrics.csv");
  CHECK(metrics.rfind("method,cohort,k,segment,category,", 0) == 0);
}

TEST_CASE("config json round trips and hashes stably") {
  PipelineConfig config;
  config.events = "x.csv";
  config.output_dir = "out";
  config.grain_days = 0.5;
  config.horizon_days = 90.0;
  config.estimator = "mkv";
  config.reach_multipliers = {2.0, 4.0};
  config.seed = 99;

  PipelineConfig back = config_from_json(config_to_json(config));
  CHECK(back.events == config.events);
  CHECK(back.grain_days == config.grain_days);
  CHECK(back.horizon_days == config.horizon_days);
  CHECK(back.estimator == config.estimator);
  CHECK(back.reach_multipliers == config.reach_multipliers);
  CHECK(back.seed == config.seed);
  CHECK(back.count_cells() == 180);

  const std::string h = config_hash(config);
  CHECK(h.size() == 16);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(config_hash(back) == h);
  PipelineConfig other = config;
  other.seed = 100;
  CHECK(config_hash(other) != h);

  CHECK_THROWS_AS(config_from_json("{\"estimator\": \"magic\"}"), ValidationError);
  CHECK_THROWS_AS(config_from_json("not json"), ValidationError);
  PipelineConfig broken = config;
  broken.grain_days = 0.7;  // 90 / 0.7 is not integral
  CHECK_THROWS_AS(broken.count_cells(), ValidationError);
}

}  // TEST_SUITE
