#include "audience/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "audience/rng.hpp"

namespace audience {

namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

double weibull_eval(double age, double lambda, double k, double floor) {
  if (k < 1.0 && age < floor) age = floor;  // density diverges at age 0
  return weibull_pdf(age, lambda, k);
}

void check_positive_params(const KernelParams& params) {
  if (const auto* e = std::get_if<ExponentialKernel>(&params)) {
    if (!(e->omega > 0.0)) throw ValidationError("exponential scale must be positive");
  } else if (const auto* w = std::get_if<WeibullKernel>(&params)) {
    if (!(w->lambda > 0.0) || !(w->k > 0.0)) {
      throw ValidationError("weibull scale and shape must be positive");
    }
  } else {
    for (const auto& c : std::get<MixtureOfWeibulls>(params).components) {
      if (!(c.lambda > 0.0) || !(c.k > 0.0)) {
        throw ValidationError("mixture component scale and shape must be positive");
      }
      if (c.weight < 0.0) throw ValidationError("mixture weights must be non-negative");
    }
  }
}

}  // namespace

double weibull_pdf(double x, double lambda, double k) {
  if (x < 0.0) return 0.0;
  const double z = x / lambda;
  return (k / lambda) * std::pow(z, k - 1.0) * std::exp(-std::pow(z, k));
}

double weibull_logpdf(double x, double lambda, double k) {
  if (x <= 0.0) {
    if (k > 1.0) return -kInf;
    if (k == 1.0) return x < 0.0 ? -kInf : -std::log(lambda);
    return x < 0.0 ? -kInf : kInf;
  }
  const double lz = std::log(x) - std::log(lambda);
  return std::log(k) - std::log(lambda) + (k - 1.0) * lz - std::exp(k * lz);
}

double eval_kernel(const KernelParams& params, double age, double zero_age_floor) {
  if (age < 0.0) throw ValidationError("kernel age must be non-negative");
  check_positive_params(params);
  if (const auto* e = std::get_if<ExponentialKernel>(&params)) {
    return std::exp(-age / e->omega);
  }
  if (const auto* w = std::get_if<WeibullKernel>(&params)) {
    return weibull_eval(age, w->lambda, w->k, zero_age_floor);
  }
  double level = 0.0;
  for (const auto& c : std::get<MixtureOfWeibulls>(params).components) {
    level += c.weight * weibull_eval(age, c.lambda, c.k, zero_age_floor);
  }
  return level;
}

double kernel_sup(const KernelParams& params, double from, double to,
                  double zero_age_floor) {
  if (from < 0.0 || to < from) throw ValidationError("invalid kernel age interval");
  check_positive_params(params);
  if (const auto* e = std::get_if<ExponentialKernel>(&params)) {
    return std::exp(-from / e->omega);
  }
  auto one = [&](double lambda, double k) {
    if (k <= 1.0) return weibull_eval(from, lambda, k, zero_age_floor);
    const double mode = lambda * std::pow((k - 1.0) / k, 1.0 / k);
    if (to <= mode) return weibull_pdf(to, lambda, k);
    if (from >= mode) return weibull_pdf(from, lambda, k);
    return weibull_pdf(mode, lambda, k);
  };
  if (const auto* w = std::get_if<WeibullKernel>(&params)) {
    return one(w->lambda, w->k);
  }
  double bound = 0.0;
  for (const auto& c : std::get<MixtureOfWeibulls>(params).components) {
    bound += c.weight * one(c.lambda, c.k);
  }
  return bound;
}

QuantizedKernel quantize_kernel(const KernelParams& params, double grain, int cells) {
  if (!(grain > 0.0)) throw ValidationError("quantization grain must be positive");
  if (cells < 1) throw ValidationError("quantization needs at least one cell");
  QuantizedKernel q;
  q.grain = grain;
  q.source = params;
  q.levels.resize(cells);
  // the age-0 cell uses the same clamp scale as the grid it lives on
  const double floor = grain * 1e-3;
  for (int s = 0; s < cells; ++s) {
    const double level = eval_kernel(params, s * grain, floor);
    if (!std::isfinite(level)) throw NumericalError("quantized kernel level not finite");
    q.levels[s] = level;
  }
  return q;
}

namespace {

struct WeightedSamples {
  // natural logs cached once; weights normalized to sum 1
  std::vector<double> log_x;
  std::vector<double> w;
  double mean_log = 0.0;  // weighted
  double max_log = 0.0;   // over positive-weight samples
};

WeightedSamples prepare_samples(const std::vector<double>& samples,
                                const std::vector<double>& weights) {
  if (samples.size() != weights.size()) {
    throw ValidationError("sample and weight counts differ");
  }
  WeightedSamples ws;
  double wsum = 0.0;
  int effective = 0;
  double lone = 1.0;  // the sample itself, exact, when there is only one
  ws.max_log = -kInf;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!(samples[i] > 0.0)) throw ValidationError("weibull samples must be positive");
    if (weights[i] < 0.0) throw ValidationError("weights must be non-negative");
    if (weights[i] == 0.0) continue;
    ws.log_x.push_back(std::log(samples[i]));
    ws.w.push_back(weights[i]);
    wsum += weights[i];
    ws.max_log = std::max(ws.max_log, ws.log_x.back());
    lone = samples[i];
    ++effective;
  }
  if (effective < 2 || wsum <= 0.0) {
    throw FitDegenerate("weibull fit needs at least two weighted samples",
                        {effective == 1 ? lone : 1.0, 1.0});
  }
  double mean = 0.0;
  double var = 0.0;
  for (std::size_t i = 0; i < ws.w.size(); ++i) {
    ws.w[i] /= wsum;
    mean += ws.w[i] * ws.log_x[i];
  }
  for (std::size_t i = 0; i < ws.w.size(); ++i) {
    const double d = ws.log_x[i] - mean;
    var += ws.w[i] * d * d;
  }
  ws.mean_log = mean;
  if (var < 1e-20) {
    throw FitDegenerate("weibull fit is degenerate on zero-spread samples",
                        {std::exp(mean), 1.0});
  }
  return ws;
}

struct Score {
  double g = 0.0;
  double gprime = 0.0;
  double log_lambda = 0.0;
};

// Profile score in k with lambda maximized out: lambda^k = sum w x^k.
// Tilted sums are shifted by max_log so exp never overflows.
Score score_at(const WeightedSamples& ws, double k) {
  double b = 0.0, a1 = 0.0, a2 = 0.0;
  for (std::size_t i = 0; i < ws.w.size(); ++i) {
    const double e = ws.w[i] * std::exp(k * (ws.log_x[i] - ws.max_log));
    b += e;
    a1 += e * ws.log_x[i];
    a2 += e * ws.log_x[i] * ws.log_x[i];
  }
  const double r1 = a1 / b;
  Score s;
  s.g = r1 - ws.mean_log - 1.0 / k;
  s.gprime = (a2 / b - r1 * r1) + 1.0 / (k * k);
  s.log_lambda = ws.max_log + std::log(b) / k;
  return s;
}

WeibullKernel solve_weibull(const WeightedSamples& ws) {
  // Gumbel moment relation: Var(ln X) = pi^2 / (6 k^2)
  constexpr double kPi = 3.141592653589793;
  double var = 0.0;
  for (std::size_t i = 0; i < ws.w.size(); ++i) {
    const double d = ws.log_x[i] - ws.mean_log;
    var += ws.w[i] * d * d;
  }
  double k = std::clamp(kPi / std::sqrt(6.0 * var), 1e-2, 1e3);

  // the score is strictly increasing in k, so bracket then Newton inside it
  double lo = k, hi = k;
  Score s = score_at(ws, k);
  if (s.g < 0.0) {
    while (s.g < 0.0 && hi < 1e6) {
      lo = hi;
      hi *= 2.0;
      s = score_at(ws, hi);
    }
    k = hi;
  } else {
    while (s.g > 0.0 && lo > 1e-8) {
      hi = lo;
      lo *= 0.5;
      s = score_at(ws, lo);
    }
    k = lo;
  }
  if (s.g < 0.0) lo = k; else hi = k;

  Score cur = s;
  for (int it = 0; it < 200; ++it) {
    double next = k - cur.g / cur.gprime;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    cur = score_at(ws, next);
    if (cur.g < 0.0) lo = next; else hi = next;
    const double rel = std::abs(next - k) / next;
    k = next;
    if (rel < 1e-12) break;
  }
  return {std::exp(cur.log_lambda), k};
}

}  // namespace

WeibullKernel fit_weibull(const std::vector<double>& samples) {
  return fit_weibull(samples, std::vector<double>(samples.size(), 1.0));
}

WeibullKernel fit_weibull(const std::vector<double>& samples,
                          const std::vector<double>& weights) {
  return solve_weibull(prepare_samples(samples, weights));
}

double mow_loglik(const MixtureOfWeibulls& params, const std::vector<double>& samples) {
  double wsum = 0.0;
  for (const auto& c : params.components) wsum += c.weight;
  if (std::abs(wsum - 1.0) > 1e-9) {
    throw ValidationError("mixture weights must sum to 1 for likelihoods");
  }
  double ll = 0.0;
  std::vector<double> terms(params.components.size());
  for (double x : samples) {
    if (!(x > 0.0)) throw ValidationError("mixture samples must be positive");
    double m = -kInf;
    for (std::size_t j = 0; j < params.components.size(); ++j) {
      const auto& c = params.components[j];
      terms[j] = c.weight > 0.0
                     ? std::log(c.weight) + weibull_logpdf(x, c.lambda, c.k)
                     : -kInf;
      m = std::max(m, terms[j]);
    }
    if (m == -kInf) return -kInf;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - m);
    ll += m + std::log(acc);
  }
  return ll;
}

namespace {

struct EmRun {
  MixtureOfWeibulls params;
  double loglik = -kInf;
  std::vector<double> trace;
  std::vector<std::string> warnings;
};

EmRun run_em(const std::vector<double>& samples, const std::vector<double>& init_lambda,
             double init_k, const MowFitOptions& options, Rng* jitter) {
  const std::size_t n = samples.size();
  EmRun run;
  for (double l : init_lambda) {
    MowComponent c;
    c.lambda = jitter ? l * (1.0 + 0.05 * jitter->uniform(-1.0, 1.0)) : l;
    c.k = jitter ? init_k * (1.0 + 0.05 * jitter->uniform(-1.0, 1.0)) : init_k;
    c.weight = 1.0 / static_cast<double>(init_lambda.size());
    run.params.components.push_back(c);
  }

  std::vector<double> resp;       // n x K responsibilities, row-major
  std::vector<double> terms;      // per-sample log joint terms
  double prev_ll = -kInf;
  bool fresh_baseline = true;     // set after init and after pruning

  for (int it = 0; it < options.max_iterations; ++it) {
    auto& comps = run.params.components;
    const std::size_t kc = comps.size();
    resp.assign(n * kc, 0.0);
    terms.assign(kc, 0.0);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = -kInf;
      for (std::size_t j = 0; j < kc; ++j) {
        terms[j] = comps[j].weight > 0.0
                       ? std::log(comps[j].weight) +
                             weibull_logpdf(samples[i], comps[j].lambda, comps[j].k)
                       : -kInf;
        m = std::max(m, terms[j]);
      }
      if (m == -kInf) {
        for (std::size_t j = 0; j < kc; ++j) resp[i * kc + j] = 1.0 / kc;
        ll = -kInf;
        continue;
      }
      double acc = 0.0;
      for (std::size_t j = 0; j < kc; ++j) acc += std::exp(terms[j] - m);
      const double lse = m + std::log(acc);
      ll += lse;
      for (std::size_t j = 0; j < kc; ++j) resp[i * kc + j] = std::exp(terms[j] - lse);
    }

    run.trace.push_back(ll);
    if (!std::isfinite(ll)) {
      run.loglik = ll;  // lost restart; a jittered one may still succeed
      return run;
    }
    if (!fresh_baseline) {
      if (ll < prev_ll - 1e-8) {
        throw NumericalError("EM log-likelihood decreased between iterations");
      }
      if (ll - prev_ll < options.tolerance) {
        run.loglik = ll;
        return run;
      }
    }
    fresh_baseline = false;
    prev_ll = ll;

    // M-step; a degenerate component refit keeps its previous parameters,
    // which never lowers the EM objective
    std::vector<double> col(n);
    std::vector<bool> dead(kc, false);
    bool pruned = false;
    for (std::size_t j = 0; j < kc; ++j) {
      double mass = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        col[i] = resp[i * kc + j];
        mass += col[i];
      }
      const double weight = mass / static_cast<double>(n);
      if (weight < options.prune_weight) {
        dead[j] = true;
        pruned = true;
        run.warnings.push_back("mixture component pruned at weight " +
                               std::to_string(weight));
        continue;
      }
      comps[j].weight = weight;
      try {
        const WeibullKernel wk = fit_weibull(samples, col);
        comps[j].lambda = wk.lambda;
        comps[j].k = wk.k;
      } catch (const FitDegenerate&) {
      }
    }
    if (pruned) {
      std::vector<MowComponent> live;
      for (std::size_t j = 0; j < kc; ++j) {
        if (!dead[j]) live.push_back(comps[j]);
      }
      if (live.empty()) throw NumericalError("all mixture components collapsed");
      double total = 0.0;
      for (const auto& c : live) total += c.weight;
      for (auto& c : live) c.weight /= total;
      comps = std::move(live);
      fresh_baseline = true;  // objective is not comparable across a prune
    } else {
      double total = 0.0;
      for (const auto& c : comps) total += c.weight;
      for (auto& c : comps) c.weight /= total;
    }
  }
  run.loglik = prev_ll;
  return run;
}

}  // namespace

MowFit fit_mow(const std::vector<double>& samples, const MowFitOptions& options) {
  const int kc = options.components;
  if (kc < 1) throw ValidationError("mixture needs at least one component");
  if (samples.size() < static_cast<std::size_t>(kc)) {
    throw ValidationError("fewer samples than mixture components; reduce the component count");
  }
  for (double x : samples) {
    if (!(x > 0.0)) throw ValidationError("mixture samples must be positive");
  }

  // scales start on the (K+1)-quantile grid of the samples
  std::vector<double> sorted(samples);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> init_lambda(kc);
  for (int i = 1; i <= kc; ++i) {
    const double pos = static_cast<double>(i) / (kc + 1) * (sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const double q = lo + 1 < sorted.size()
                         ? sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
                         : sorted[lo];
    init_lambda[i - 1] = std::max(q, 1e-12);
  }

  MowFit best;
  best.loglik = -kInf;
  bool have_best = false;
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    Rng jitter = Rng::substream(options.seed, static_cast<std::uint64_t>(r));
    EmRun run = run_em(samples, init_lambda, 4.0, options, r == 0 ? nullptr : &jitter);
    if (!have_best || run.loglik > best.loglik) {
      best.params = std::move(run.params);
      best.loglik = run.loglik;
      best.trace = std::move(run.trace);
      best.warnings = std::move(run.warnings);
      have_best = true;
    }
  }

  std::sort(best.params.components.begin(), best.params.components.end(),
            [](const MowComponent& a, const MowComponent& b) { return a.lambda < b.lambda; });
  return best;
}

KernelBank KernelBank::uniform(int categories, const KernelParams& params,
                               const std::string& provenance_tag) {
  KernelBank bank;
  bank.categories = categories;
  bank.cells.assign(static_cast<std::size_t>(categories) * categories, params);
  bank.provenance.assign(bank.cells.size(), provenance_tag);
  return bank;
}

namespace {

json params_json(const KernelParams& params) {
  json j;
  if (const auto* e = std::get_if<ExponentialKernel>(&params)) {
    j["kind"] = "exponential";
    j["params"] = {{"omega", e->omega}};
  } else if (const auto* w = std::get_if<WeibullKernel>(&params)) {
    j["kind"] = "weibull";
    j["params"] = {{"lambda", w->lambda}, {"k", w->k}};
  } else {
    j["kind"] = "mow";
    json comps = json::array();
    for (const auto& c : std::get<MixtureOfWeibulls>(params).components) {
      comps.push_back({{"lambda", c.lambda}, {"k", c.k}, {"weight", c.weight}});
    }
    j["params"] = {{"components", comps}};
  }
  return j;
}

KernelParams params_from(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const json& p = j.at("params");
  KernelParams out;
  if (kind == "exponential") {
    out = ExponentialKernel{p.at("omega").get<double>()};
  } else if (kind == "weibull") {
    out = WeibullKernel{p.at("lambda").get<double>(), p.at("k").get<double>()};
  } else if (kind == "mow") {
    MixtureOfWeibulls m;
    for (const json& c : p.at("components")) {
      m.components.push_back({c.at("lambda").get<double>(), c.at("k").get<double>(),
                              c.at("weight").get<double>()});
    }
    out = m;
  } else {
    throw ValidationError("unknown kernel kind: " + kind);
  }
  check_positive_params(out);
  return out;
}

}  // namespace

std::string kernel_params_to_json(const KernelParams& params) {
  return params_json(params).dump();
}

KernelParams kernel_params_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad kernel json: ") + e.what());
  }
  return params_from(j);
}

std::string kernel_bank_to_json(const KernelBank& bank) {
  json j;
  j["categories"] = bank.categories;
  json cells = json::array();
  for (int c = 0; c < bank.categories; ++c) {
    for (int cp = 0; cp < bank.categories; ++cp) {
      json cell = params_json(bank.at(c, cp));
      cell["pair"] = {c, cp};
      cell["provenance"] = bank.provenance_at(c, cp);
      cells.push_back(std::move(cell));
    }
  }
  j["kernels"] = std::move(cells);
  return j.dump(2);
}

KernelBank kernel_bank_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad kernel bank json: ") + e.what());
  }
  KernelBank bank;
  bank.categories = j.at("categories").get<int>();
  if (bank.categories < 1) throw ValidationError("kernel bank needs categories >= 1");
  const std::size_t total =
      static_cast<std::size_t>(bank.categories) * bank.categories;
  bank.cells.assign(total, KernelParams{ExponentialKernel{1.0}});
  bank.provenance.assign(total, "");
  std::vector<bool> seen(total, false);
  for (const json& cell : j.at("kernels")) {
    const auto pair = cell.at("pair");
    const int c = pair.at(0).get<int>();
    const int cp = pair.at(1).get<int>();
    if (c < 0 || c >= bank.categories || cp < 0 || cp >= bank.categories) {
      throw ValidationError("kernel bank pair index out of range");
    }
    const std::size_t idx = static_cast<std::size_t>(c) * bank.categories + cp;
    if (seen[idx]) throw ValidationError("duplicate kernel bank pair");
    seen[idx] = true;
    bank.cells[idx] = params_from(cell);
    bank.provenance[idx] = cell.value("provenance", "");
  }
  for (std::size_t i = 0; i < total; ++i) {
    if (!seen[i]) throw ValidationError("kernel bank is missing a pair");
  }
  return bank;
}

}  // namespace audience
