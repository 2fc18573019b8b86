#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audience/estimation.hpp"
#include "audience/events.hpp"
#include "audience/kernels.hpp"
#include "audience/rng.hpp"

namespace audience {

/// Known intensity to sample synthetic logs from. mu0 here is a PER-USER
/// base rate (events/day for one user); the population estimate recovered
/// from a simulated log scales with the user count.
struct GroundTruthModel {
  std::vector<double> mu0;
  LatentNetwork network;
  KernelBank kernels;
  double horizon_days = 0.0;  // T
  int users = 0;
  std::vector<std::string> category_ids;  // optional; defaults to c0, c1, ...

  int category_count() const { return static_cast<int>(mu0.size()); }
};

std::string model_to_json(const GroundTruthModel& model);
GroundTruthModel model_from_json(const std::string& text);

struct SimulateOptions {
  std::uint64_t seed = 1;
  int threads = 1;
  double lookahead_days = 5.0;  // bound validity window for thinning
};

/// Samples every user's event sequence from the model's conditional
/// intensity by thinning against a piecewise-constant upper bound. Users are
/// independent; each gets its own random substream, so results do not
/// depend on the thread count.
BehavioralLog simulate_logs(const GroundTruthModel& model,
                            const SimulateOptions& options = {});

/// Marks a promo_rate fraction of the existing events promotional and
/// appends `reseller_count` synthetic users whose history is a same-category
/// burst (12 purchases inside 3 days) plus two spread-out purchases in a
/// second category. Synthetic events stay organic so the velocity filter,
/// not the promotion filter, is what catches them.
BehavioralLog inject_noise(const BehavioralLog& log, double promo_rate,
                           int reseller_count, std::uint64_t seed);

/// Inverse-CDF Weibull draw: lambda * (-ln U)^(1/k).
double sample_weibull(Rng& rng, double lambda, double k);
/// Component pick proportional to weight, then a Weibull draw from it.
double sample_mow(Rng& rng, const MixtureOfWeibulls& params);

}  // namespace audience
