#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "audience/errors.hpp"

namespace audience {

class Rng;

/// Triggering-kernel families. All evaluate to a non-negative excitation
/// level as a function of event age in days.
struct ExponentialKernel {
  double omega = 1.0;  // scale, days
};

struct WeibullKernel {
  double lambda = 1.0;  // scale, days
  double k = 1.0;       // shape
};

struct MowComponent {
  double lambda = 1.0;
  double k = 1.0;
  double weight = 1.0;  // conic coefficient, >= 0
};

struct MixtureOfWeibulls {
  std::vector<MowComponent> components;
};

using KernelParams = std::variant<ExponentialKernel, WeibullKernel, MixtureOfWeibulls>;

/// Weibull density and log-density. x > 0 unless k >= 1.
double weibull_pdf(double x, double lambda, double k);
double weibull_logpdf(double x, double lambda, double k);

/// Kernel level at the given age. Shapes below 1 diverge at age 0, so ages
/// under `zero_age_floor` are clamped up to it for those components only.
double eval_kernel(const KernelParams& params, double age,
                   double zero_age_floor = 1e-3);

/// Upper bound of the kernel over [from, to] (to may be +inf). Tight for
/// exponential and single Weibull; a per-component sum bound for mixtures.
double kernel_sup(const KernelParams& params, double from, double to,
                  double zero_age_floor = 1e-3);

/// Piecewise-constant approximation on a uniform age grid: levels[s] equals
/// the continuous kernel at age s * grain.
struct QuantizedKernel {
  std::vector<double> levels;
  double grain = 1.0;  // g, days
  KernelParams source;
};

QuantizedKernel quantize_kernel(const KernelParams& params, double grain,
                                int cells);

/// Raised when a Weibull fit has no information to work with (fewer than two
/// effective samples, or zero spread). Carries a usable stand-in.
class FitDegenerate : public NumericalError {
 public:
  FitDegenerate(const std::string& what, WeibullKernel fallback_params)
      : NumericalError(what), fallback(fallback_params) {}

  WeibullKernel fallback;
};

/// Maximum-likelihood Weibull fit; the weighted overload serves the EM
/// M-step. Stops when the relative change in k drops below 1e-8, capped at
/// 200 iterations.
WeibullKernel fit_weibull(const std::vector<double>& samples);
WeibullKernel fit_weibull(const std::vector<double>& samples,
                          const std::vector<double>& weights);

/// Log-likelihood of samples under a mixture whose weights sum to 1.
double mow_loglik(const MixtureOfWeibulls& params,
                  const std::vector<double>& samples);

struct MowFit {
  MixtureOfWeibulls params;
  double loglik = 0.0;
  std::vector<double> trace;  // per-iteration log-likelihood, winning restart
  std::vector<std::string> warnings;
};

struct MowFitOptions {
  int components = 5;  // K
  std::uint64_t seed = 1;
  int restarts = 3;
  int max_iterations = 500;
  double tolerance = 1e-8;       // minimum log-likelihood improvement
  double prune_weight = 1e-6;    // components below this are dropped
};

/// EM fit of a K-component Weibull mixture; best of `restarts` seeded runs.
/// The log-likelihood sequence is checked for monotonicity on every run.
MowFit fit_mow(const std::vector<double>& samples, const MowFitOptions& options = {});

/// Kernel grid over all ordered category pairs. Cell (c, c') holds the
/// triggering kernel for the influence of c' on c, stored row-major.
struct KernelBank {
  int categories = 0;
  std::vector<KernelParams> cells;
  std::vector<std::string> provenance;  // how each cell was obtained

  const KernelParams& at(int target, int source) const {
    return cells[static_cast<std::size_t>(target) * categories + source];
  }
  KernelParams& at(int target, int source) {
    return cells[static_cast<std::size_t>(target) * categories + source];
  }
  const std::string& provenance_at(int target, int source) const {
    return provenance[static_cast<std::size_t>(target) * categories + source];
  }

  static KernelBank uniform(int categories, const KernelParams& params,
                            const std::string& provenance_tag);
};

std::string kernel_params_to_json(const KernelParams& params);
KernelParams kernel_params_from_json(const std::string& text);

std::string kernel_bank_to_json(const KernelBank& bank);
KernelBank kernel_bank_from_json(const std::string& text);

}  // namespace audience
