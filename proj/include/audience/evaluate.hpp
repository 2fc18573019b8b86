#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "audience/events.hpp"
#include "audience/inference.hpp"

namespace audience {

/// Chronological train/test split. The test span holds `segments` back-to-
/// back windows of `segment_len` days; p_c is the mean per-window purchase
/// count of category c across the full windows partitioning the train span.
struct EvalProtocol {
  double train_end = 0.0;  // test starts here
  double segment_len = 9.0;
  int segments = 7;
  std::vector<double> reach_multipliers = {5.0, 10.0, 20.0};
  std::vector<double> p_c;
  /// users appearing in test but never in train (counted, not ranked)
  int train_violations = 0;

  double segment_start(int i) const { return train_end + i * segment_len; }
};

EvalProtocol split_protocol(const BehavioralLog& log, double test_days = 60.0,
                            double segment_len = 9.0, int segments = 7);

/// Events strictly before t, every user kept (possibly empty), span set to t.
/// Evaluation hands methods this view, so nothing after the segment start is
/// reachable by construction.
BehavioralLog truncate_log(const BehavioralLog& log, double t);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  std::int64_t hits = 0;
};

/// hits / audience size and hits / purchaser count. The purchaser set must
/// be non-empty; callers skip empty ones and report the exclusion.
PrecisionRecall precision_recall(const Audience& audience,
                                 const std::vector<char>& purchased,
                                 const BehavioralLog& log);

/// 1 = user has never bought the category before segment_start.
std::vector<char> cohort_assign(const BehavioralLog& log, int category,
                                double segment_start);

/// Purchase-count scores: window infinity counts the whole history, a finite
/// window only the last `window` days before t.
IntensityMatrix baseline_top(const BehavioralLog& log, double t, double window);

struct MfOptions {
  int rank = 16;
  int iterations = 15;  // full ALS sweeps
  double reg = 0.1;
  std::uint64_t seed = 1;
};

/// Implicit-feedback alternating least squares on the count snapshot
/// (confidence 1 + count, binary preference). The weighted objective is
/// checked to be non-increasing across sweeps.
IntensityMatrix baseline_mf(const std::vector<double>& counts,
                            const std::vector<std::string>& user_ids,
                            int categories, double tick,
                            const MfOptions& options = {},
                            std::vector<double>* objective_trace = nullptr);

/// |U| x |C| purchase counts strictly before t, row-major.
std::vector<double> count_snapshot(const BehavioralLog& log, double t);

/// Per-pair Poisson repeat rate blended with a category prior over `prior_days`
/// pseudo-days of exposure; score = P(at least one purchase within delta).
IntensityMatrix baseline_buy_it_again(const BehavioralLog& log, double t,
                                      double delta, double prior_days = 30.0);

/// A scoring method under evaluation: sees only the truncated log and the
/// segment start, returns scores aligned with the log's user order.
struct ExperimentMethod {
  std::string name;
  std::function<IntensityMatrix(const BehavioralLog& train_view, double t)> score;
};

struct MetricsRow {
  std::string method;
  std::string cohort;  // "all", "nc", "oc"
  double k = 0.0;
  int segment = -1;
  int category = -1;
  std::int64_t reach = 0;
  std::int64_t hits = 0;
  std::int64_t purchasers = 0;
  double precision = 0.0;
  double recall = 0.0;
};

struct SummaryRow {
  std::string method;
  std::string cohort;
  double k = 0.0;
  double precision = 0.0;  // macro average over included (segment, category)
  double recall = 0.0;
  std::int64_t included = 0;
  std::int64_t excluded = 0;  // (segment, category) pairs with no purchasers
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::vector<SummaryRow> summary;
  int train_violations = 0;
};

struct ExperimentOptions {
  bool cohorts = true;
  int threads = 1;
};

ExperimentResult run_experiment(const BehavioralLog& log,
                                const EvalProtocol& protocol,
                                const std::vector<ExperimentMethod>& methods,
                                const ExperimentOptions& options = {});

/// method,cohort,k,segment,category,precision,recall rows.
void metrics_to_csv(const ExperimentResult& result, std::ostream& out);

/// Fixed-width summary: one row per method and cohort, P@k/R@k columns.
void print_summary(const ExperimentResult& result, std::ostream& out);

}  // namespace audience
