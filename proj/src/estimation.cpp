#include "audience/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "audience/parallel.hpp"

namespace audience {

namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Synthetic diagonal matching: consecutive positive same-category gaps.
Matching diagonal_matching(const BehavioralLog& log, int user, int category) {
  Matching m;
  m.user = user;
  m.source_category = category;
  m.target_category = category;
  m.window = kInf;
  double prev = -1.0;
  bool have_prev = false;
  for (const Event& ev : log.events[user]) {
    if (ev.category != category) continue;
    if (have_prev && ev.t > prev) m.pairs.push_back({prev, ev.t});
    prev = ev.t;
    have_prev = true;
  }
  return m;
}

}  // namespace

BaseIntensities estimate_base_intensity(const BehavioralLog& log) {
  if (!(log.window_days > 0.0)) {
    throw ValidationError("base intensity needs a positive training span");
  }
  BaseIntensities base;
  base.span_days = log.window_days;
  base.mu0.assign(log.category_count(), 0.0);
  for (const auto& seq : log.events) {
    for (const Event& ev : seq) base.mu0[ev.category] += 1.0;
  }
  for (double& m : base.mu0) m /= base.span_days;
  return base;
}

double weighted_interval(const Matching& matching, const BehavioralLog& log) {
  if (matching.empty()) throw NoMatches("matching has no pairs");
  const auto& seq = log.events[matching.user];
  double num = 0.0;
  double den = 0.0;
  for (const MatchedPair& p : matching.pairs) {
    // purchases strictly inside the open interval; endpoint events sit on
    // the boundary and are excluded by the strict comparisons
    const auto lo = std::upper_bound(
        seq.begin(), seq.end(), p.source_t,
        [](double t, const Event& ev) { return t < ev.t; });
    const auto hi = std::lower_bound(
        seq.begin(), seq.end(), p.target_t,
        [](const Event& ev, double t) { return ev.t < t; });
    const auto m = static_cast<double>(std::max<std::ptrdiff_t>(0, hi - lo));
    const double w = 1.0 / std::log2(2.0 + m);
    num += w * p.gap();
    den += w;
  }
  return num / den;
}

std::vector<IntervalSummary> extract_samples(const BehavioralLog& log,
                                             const MatchingMap& matchings,
                                             int target_category,
                                             int source_category) {
  std::vector<IntervalSummary> out;
  if (target_category == source_category) {
    for (int u = 0; u < log.user_count(); ++u) {
      Matching m = diagonal_matching(log, u, target_category);
      if (m.empty()) continue;
      out.push_back({u, weighted_interval(m, log), static_cast<int>(m.size())});
    }
    return out;
  }
  const auto it = matchings.find({target_category, source_category});
  if (it == matchings.end()) return out;
  for (const Matching& m : it->second) {
    if (m.empty()) continue;
    out.push_back({m.user, weighted_interval(m, log), static_cast<int>(m.size())});
  }
  return out;
}

std::vector<double> sample_values(const std::vector<IntervalSummary>& samples) {
  std::vector<double> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(s.dbar);
  return v;
}

KernelBank estimate_kernels(const BehavioralLog& log, const MatchingMap& matchings,
                            const KernelEstimationOptions& options) {
  const int cats = log.category_count();
  if (cats < 1) throw ValidationError("kernel estimation needs categories");

  KernelBank bank;
  bank.categories = cats;
  const std::size_t total = static_cast<std::size_t>(cats) * cats;
  bank.cells.assign(total, KernelParams{WeibullKernel{}});
  bank.provenance.assign(total, "pending");

  // pass 1: fit every pair that clears the sample floor
  std::vector<std::vector<double>> diag_samples(cats);
  std::vector<char> fitted(total, 0);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(total);
  for (int c = 0; c < cats; ++c) {
    for (int cp = 0; cp < cats; ++cp) pairs.push_back({c, cp});
  }

  parallel_for(pairs.size(), options.threads, 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto [c, cp] = pairs[i];
      const std::size_t idx = static_cast<std::size_t>(c) * cats + cp;
      std::vector<double> values =
          sample_values(extract_samples(log, matchings, c, cp));
      if (c == cp) diag_samples[c] = values;
      if (static_cast<int>(values.size()) < options.min_samples) continue;
      if (c == cp) {
        if (static_cast<int>(values.size()) < options.mixture_components) continue;
        MowFitOptions mopt;
        mopt.components = options.mixture_components;
        mopt.seed = options.seed + idx;
        bank.cells[idx] = fit_mow(values, mopt).params;
        bank.provenance[idx] = "fitted-mow";
        fitted[idx] = 1;
      } else {
        try {
          bank.cells[idx] = fit_weibull(values);
          bank.provenance[idx] = "fitted-weibull";
          fitted[idx] = 1;
        } catch (const FitDegenerate&) {
          // treated as insufficient; filled by the fallback pass
        }
      }
    }
  });

  // pass 2: fallbacks from what did fit
  std::vector<double> off_lambda;
  std::vector<double> off_k;
  for (int c = 0; c < cats; ++c) {
    for (int cp = 0; cp < cats; ++cp) {
      if (c == cp) continue;
      const std::size_t idx = static_cast<std::size_t>(c) * cats + cp;
      if (!fitted[idx]) continue;
      const auto& w = std::get<WeibullKernel>(bank.cells[idx]);
      off_lambda.push_back(w.lambda);
      off_k.push_back(w.k);
    }
  }
  // half of the attribution window as an exchange-prior scale when no
  // off-diagonal pair fit at all
  const WeibullKernel off_fallback =
      off_lambda.empty() ? WeibullKernel{5.0, 1.0}
                         : WeibullKernel{median(off_lambda), median(off_k)};

  std::vector<double> pooled;
  for (const auto& v : diag_samples) pooled.insert(pooled.end(), v.begin(), v.end());
  std::optional<MixtureOfWeibulls> diag_pooled;
  if (static_cast<int>(pooled.size()) >=
      std::max(options.min_samples, options.mixture_components)) {
    MowFitOptions mopt;
    mopt.components = options.mixture_components;
    mopt.seed = options.seed;
    diag_pooled = fit_mow(pooled, mopt).params;
  }
  // monthly repeat-cycle prior when no diagonal data exists anywhere
  const MixtureOfWeibulls diag_fallback =
      diag_pooled ? *diag_pooled
                  : MixtureOfWeibulls{{MowComponent{30.0, 2.0, 1.0}}};

  for (int c = 0; c < cats; ++c) {
    for (int cp = 0; cp < cats; ++cp) {
      const std::size_t idx = static_cast<std::size_t>(c) * cats + cp;
      if (fitted[idx]) continue;
      if (c == cp) {
        bank.cells[idx] = diag_fallback;
        bank.provenance[idx] = diag_pooled ? "fallback-pooled-mow" : "fallback-default";
      } else {
        bank.cells[idx] = off_fallback;
        bank.provenance[idx] =
            off_lambda.empty() ? "fallback-default" : "fallback-median-weibull";
      }
    }
  }
  return bank;
}

LatentNetwork estimate_network_mkv(const BehavioralLog& log,
                                   const MatchingMap& matchings,
                                   double alpha_s, double beta_s) {
  const int cats = log.category_count();
  LatentNetwork net;
  net.categories = cats;
  net.estimator = "mkv";
  net.alpha_s = alpha_s;
  net.beta_s = beta_s;
  net.beta.assign(static_cast<std::size_t>(cats) * cats, 0.0);

  std::vector<double> matches(net.beta.size(), 0.0);
  for (const auto& [key, per_user] : matchings) {
    const auto& [c, cp] = key;
    double total = 0.0;
    for (const Matching& m : per_user) total += static_cast<double>(m.size());
    matches[static_cast<std::size_t>(c) * cats + cp] = total;
  }
  for (int c = 0; c < cats; ++c) {
    double diag = 0.0;
    for (int u = 0; u < log.user_count(); ++u) {
      diag += static_cast<double>(diagonal_matching(log, u, c).size());
    }
    matches[static_cast<std::size_t>(c) * cats + c] = diag;
  }

  const std::vector<std::int64_t> totals = category_totals(log);
  for (int c = 0; c < cats; ++c) {
    for (int cp = 0; cp < cats; ++cp) {
      const std::size_t idx = static_cast<std::size_t>(c) * cats + cp;
      net.beta[idx] = (matches[idx] + alpha_s) /
                      (static_cast<double>(totals[cp]) + cats * beta_s);
    }
  }
  return net;
}

LatentNetwork lift_network(const LatentNetwork& mkv,
                           const std::vector<std::int64_t>& totals,
                           double cap, std::vector<std::string>* warnings) {
  if (static_cast<int>(totals.size()) != mkv.categories) {
    throw ValidationError("category totals do not match the network size");
  }
  std::int64_t grand = 0;
  for (auto t : totals) grand += t;
  if (grand <= 0) throw ValidationError("lifting needs a non-empty log");

  LatentNetwork out = mkv;
  out.estimator = "lmkv";
  for (int c = 0; c < mkv.categories; ++c) {
    if (totals[c] <= 0) {
      if (warnings) {
        warnings->push_back("category " + std::to_string(c) +
                            " has no purchases; lifted row capped");
      }
      for (int cp = 0; cp < mkv.categories; ++cp) {
        out.at(c, cp) = std::min(cap, mkv.at(c, cp) * cap);
      }
      continue;
    }
    const double share = static_cast<double>(totals[c]) / static_cast<double>(grand);
    for (int cp = 0; cp < mkv.categories; ++cp) {
      out.at(c, cp) = mkv.at(c, cp) / share;
    }
  }
  return out;
}

std::vector<std::int64_t> category_totals(const BehavioralLog& log) {
  std::vector<std::int64_t> totals(log.category_count(), 0);
  for (const auto& seq : log.events) {
    for (const Event& ev : seq) ++totals[ev.category];
  }
  return totals;
}

void network_to_csv(const LatentNetwork& network, std::ostream& out) {
  for (int c = 0; c < network.categories; ++c) {
    for (int cp = 0; cp < network.categories; ++cp) {
      if (cp) out << ',';
      out << format_double(network.at(c, cp));
    }
    out << '\n';
  }
}

std::string network_to_json(const LatentNetwork& network,
                            const CategoryIndex* categories) {
  json j;
  j["estimator"] = network.estimator;
  j["alpha_s"] = network.alpha_s;
  j["beta_s"] = network.beta_s;
  j["categories"] = network.categories;
  if (categories) j["category_ids"] = categories->ids();
  json rows = json::array();
  for (int c = 0; c < network.categories; ++c) {
    json row = json::array();
    for (int cp = 0; cp < network.categories; ++cp) row.push_back(network.at(c, cp));
    rows.push_back(std::move(row));
  }
  j["beta"] = std::move(rows);
  return j.dump(2);
}

LatentNetwork network_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad network json: ") + e.what());
  }
  LatentNetwork net;
  net.categories = j.at("categories").get<int>();
  net.estimator = j.at("estimator").get<std::string>();
  net.alpha_s = j.at("alpha_s").get<double>();
  net.beta_s = j.at("beta_s").get<double>();
  const json& rows = j.at("beta");
  if (static_cast<int>(rows.size()) != net.categories) {
    throw DataError("network row count mismatch");
  }
  net.beta.reserve(static_cast<std::size_t>(net.categories) * net.categories);
  for (const json& row : rows) {
    if (static_cast<int>(row.size()) != net.categories) {
      throw DataError("network column count mismatch");
    }
    for (const json& v : row) {
      const double b = v.get<double>();
      if (!(b >= 0.0) || !std::isfinite(b)) {
        throw DataError("network entries must be finite and non-negative");
      }
      net.beta.push_back(b);
    }
  }
  return net;
}

std::string base_intensities_to_json(const BaseIntensities& base,
                                     const CategoryIndex* categories) {
  json j;
  j["span_days"] = base.span_days;
  if (categories) j["category_ids"] = categories->ids();
  j["mu0"] = base.mu0;
  return j.dump(2);
}

BaseIntensities base_intensities_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad base intensity json: ") + e.what());
  }
  BaseIntensities base;
  base.span_days = j.at("span_days").get<double>();
  for (const json& v : j.at("mu0")) {
    const double m = v.get<double>();
    if (!(m >= 0.0) || !std::isfinite(m)) {
      throw DataError("base intensities must be finite and non-negative");
    }
    base.mu0.push_back(m);
  }
  return base;
}

}  // namespace audience
