#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "audience/events.hpp"
#include "audience/kernels.hpp"
#include "audience/preprocess.hpp"

namespace audience {

/// Population base rates per category, events/day over the training span.
struct BaseIntensities {
  std::vector<double> mu0;
  double span_days = 0.0;  // T
};

/// Cross-category excitation matrix. beta[c][c'] scales the influence of
/// purchases in c' on the intensity of c.
struct LatentNetwork {
  int categories = 0;
  std::vector<double> beta;  // row-major, row = target category
  std::string estimator;     // "mkv" or "lmkv"
  double alpha_s = 3.0;
  double beta_s = 0.1;

  double at(int target, int source) const {
    return beta[static_cast<std::size_t>(target) * categories + source];
  }
  double& at(int target, int source) {
    return beta[static_cast<std::size_t>(target) * categories + source];
  }
};

/// One user's averaged inter-purchase interval for a category pair.
struct IntervalSummary {
  int user = -1;
  double dbar = 0.0;
  int match_count = 0;
};

/// Raised by weighted_interval on an empty matching; callers skip the triple.
class NoMatches : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

BaseIntensities estimate_base_intensity(const BehavioralLog& log);

/// Interleave-weighted mean gap: weights 1/log2(2 + m) where m counts the
/// user's purchases strictly inside the pair's open interval.
double weighted_interval(const Matching& matching, const BehavioralLog& log);

/// Per-user d-bar samples for one ordered pair. Off-diagonal pairs read the
/// attribution matchings; the diagonal uses consecutive same-category gaps
/// with no window cap.
std::vector<IntervalSummary> extract_samples(const BehavioralLog& log,
                                             const MatchingMap& matchings,
                                             int target_category,
                                             int source_category);

std::vector<double> sample_values(const std::vector<IntervalSummary>& samples);

struct KernelEstimationOptions {
  int mixture_components = 5;  // K, diagonal fits
  int min_samples = 30;        // below this a pair falls back to a prior
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Fits the full kernel grid: Weibull per off-diagonal pair, a K-component
/// mixture per diagonal. Sparse pairs fall back to the median of the fitted
/// off-diagonal parameters, sparse diagonals to a mixture fitted on all
/// diagonal samples pooled; provenance records which path produced each cell.
KernelBank estimate_kernels(const BehavioralLog& log, const MatchingMap& matchings,
                            const KernelEstimationOptions& options = {});

/// Smoothed match-count ratio estimator:
/// beta[c][c'] = (matched pairs + alpha_s) / (purchases in c' + |C| beta_s).
LatentNetwork estimate_network_mkv(const BehavioralLog& log,
                                   const MatchingMap& matchings,
                                   double alpha_s = 3.0, double beta_s = 0.1);

/// Divides each row by the target category's popularity share. Zero-count
/// target categories are capped instead and reported into `warnings`.
LatentNetwork lift_network(const LatentNetwork& mkv,
                           const std::vector<std::int64_t>& category_totals,
                           double cap = 1e6,
                           std::vector<std::string>* warnings = nullptr);

/// Total purchases per category over the whole log.
std::vector<std::int64_t> category_totals(const BehavioralLog& log);

void network_to_csv(const LatentNetwork& network, std::ostream& out);
std::string network_to_json(const LatentNetwork& network,
                            const CategoryIndex* categories = nullptr);
LatentNetwork network_from_json(const std::string& text);

std::string base_intensities_to_json(const BaseIntensities& base,
                                     const CategoryIndex* categories = nullptr);
BaseIntensities base_intensities_from_json(const std::string& text);

}  // namespace audience
