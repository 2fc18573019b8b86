#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "audience/estimation.hpp"
#include "audience/events.hpp"
#include "audience/kernels.hpp"

namespace audience {

/// Network-scaled quantized kernel levels for every ordered category pair.
/// target[c] is a |C| x S row-major matrix with
///   target[c][c' * S + s] = beta[c][c'] * kappa_{c,c'}(s * g).
/// source_major[c'] is the same data regrouped for the count-matrix product:
/// an S x |C| matrix with source_major[c'][s * |C| + c] = target[c][c' * S + (S-1-s)],
/// so row s lines up with count cell s directly.
struct PrecomputeBank {
  double grain = 1.0;  // g
  int cells = 0;       // S
  int categories = 0;
  std::vector<std::vector<double>> target;
  std::vector<std::vector<double>> source_major;
};

/// Convolution output at the final tick: sum_s levels[S-1-s] * counts[s].
/// The newest cell s = S-1 meets the age-0 kernel level.
double quantized_excitation(const std::vector<double>& levels,
                            const std::vector<double>& counts);
double quantized_excitation(const std::vector<double>& levels,
                            const std::vector<std::int64_t>& counts);

PrecomputeBank build_precompute(const LatentNetwork& network,
                                const KernelBank& bank, double grain, int cells);

/// Intensities for every (user, category) at one evaluation tick.
struct IntensityMatrix {
  int categories = 0;
  double grain = 1.0;
  int cells = 0;
  double tick = 0.0;  // evaluation time, end of the count window
  std::vector<std::string> user_ids;
  std::vector<double> lambda;  // |U| x |C| row-major

  int user_count() const { return static_cast<int>(user_ids.size()); }
  double at(int user, int category) const {
    return lambda[static_cast<std::size_t>(user) * categories + category];
  }
};

/// Lambda[u][c] = mu0[c] + excitation from all source categories, computed
/// as sparse count rows times the regrouped precompute. Matches the scalar
/// quadrature path to float accumulation error.
IntensityMatrix infer_intensities(const BaseIntensities& base,
                                  const PrecomputeBank& pre,
                                  const std::vector<CountMatrix>& counts,
                                  const std::vector<std::string>& user_ids,
                                  int threads = 1);

/// Reference scalar path for one (user, category); used to cross-check the
/// matrix path.
double intensity_scalar(const BaseIntensities& base, const PrecomputeBank& pre,
                        const std::vector<CountMatrix>& counts, int user,
                        int category);

/// Exact continuous-time intensity from raw event ages, no quantization.
double cif_continuous(const BehavioralLog& log, int user, int category,
                      const BaseIntensities& base, const LatentNetwork& network,
                      const KernelBank& bank, double t);

struct AudienceMember {
  std::string user_id;
  double score = 0.0;
};

/// Top users of one category by descending intensity, ties by ascending id.
struct Audience {
  int category = -1;
  std::int64_t reach = 0;  // requested size
  std::vector<AudienceMember> members;
  std::string warning;  // set when reach exceeded the universe
};

Audience rank_audience(const IntensityMatrix& lambda, int category,
                       std::int64_t reach);

/// user_id,category_id,intensity rows, users in id order as stored.
void intensities_to_csv(const IntensityMatrix& lambda,
                        const CategoryIndex& categories, std::ostream& out);

/// Compact binary form: one JSON header line, then raw doubles.
void write_intensities(const IntensityMatrix& lambda, std::ostream& out);
IntensityMatrix read_intensities(std::istream& in);

/// rank,user_id,score rows.
void audience_to_csv(const Audience& audience, std::ostream& out);

}  // namespace audience
