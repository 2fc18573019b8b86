#include "audience/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "audience/parallel.hpp"

namespace audience {

namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string padded_id(const char* prefix, int index, int width) {
  std::string digits = std::to_string(index);
  std::string out(prefix);
  out.append(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0');
  out += digits;
  return out;
}

int id_width(int count) {
  int width = 1;
  for (int v = count; v >= 10; v /= 10) ++width;
  return width;
}

struct PastEvent {
  double t;
  int category;
};

/// One user's trajectory. The bound over (t, t + L] is the base total plus
/// per-event kernel sups; it is refreshed after every acceptance and every
/// lookahead expiry, and stale events are dropped once their best possible
/// future contribution falls below the pruning floor.
void simulate_user(const GroundTruthModel& model, double lookahead_days,
                   Rng& rng, std::vector<Event>* out) {
  const int cats = model.category_count();
  const double horizon = model.horizon_days;
  double mu_total = 0.0;
  for (double m : model.mu0) mu_total += m;

  std::vector<PastEvent> active;
  std::vector<double> lam(cats);

  // total influence of one past event of category cp over ages [a, a + span]
  const auto event_bound = [&](int cp, double age, double span) {
    double b = 0.0;
    for (int c = 0; c < cats; ++c) {
      const double beta = model.network.at(c, cp);
      if (beta > 0.0) {
        b += beta * kernel_sup(model.kernels.at(c, cp), age, age + span);
      }
    }
    return b;
  };

  double t = 0.0;
  double bound = 0.0;
  double bound_until = 0.0;  // forces a refresh on entry
  const double lookahead = std::max(1e-3, lookahead_days);
  bool dirty = true;

  while (t < horizon) {
    if (dirty || t >= bound_until) {
      std::vector<PastEvent> keep;
      keep.reserve(active.size());
      bound = mu_total;
      for (const PastEvent& ev : active) {
        const double age = t - ev.t;
        if (event_bound(ev.category, age, kInf) < 1e-13) continue;
        keep.push_back(ev);
        bound += event_bound(ev.category, age, lookahead);
      }
      active.swap(keep);
      bound_until = std::min(t + lookahead, horizon);
      dirty = false;
      if (!std::isfinite(bound)) {
        throw NumericalError("thinning upper bound is not finite");
      }
    }
    if (bound <= 1e-300) {
      t = bound_until;
      continue;
    }
    const double wait = rng.exponential(bound);
    if (t + wait >= bound_until) {
      t = bound_until;
      continue;
    }
    t += wait;

    double total = 0.0;
    for (int c = 0; c < cats; ++c) {
      double v = model.mu0[c];
      for (const PastEvent& ev : active) {
        const double beta = model.network.at(c, ev.category);
        if (beta > 0.0) {
          v += beta * eval_kernel(model.kernels.at(c, ev.category), t - ev.t);
        }
      }
      lam[c] = v;
      total += v;
    }
    if (total > bound * (1.0 + 1e-9)) {
      throw NumericalError("thinning bound violated by the true intensity");
    }
    if (rng.uniform() * bound >= total) continue;  // rejected

    double pick = rng.uniform() * total;
    int chosen = cats - 1;
    for (int c = 0; c < cats; ++c) {
      pick -= lam[c];
      if (pick <= 0.0) {
        chosen = c;
        break;
      }
    }
    Event ev;
    ev.t = t;
    ev.category = chosen;
    out->push_back(ev);
    active.push_back({t, chosen});
    dirty = true;
  }
}

}  // namespace

double sample_weibull(Rng& rng, double lambda, double k) {
  double u = rng.uniform();
  while (u <= 0.0) u = rng.uniform();
  return lambda * std::pow(-std::log(u), 1.0 / k);
}

double sample_mow(Rng& rng, const MixtureOfWeibulls& params) {
  double total = 0.0;
  for (const auto& c : params.components) total += c.weight;
  double pick = rng.uniform() * total;
  for (const auto& c : params.components) {
    pick -= c.weight;
    if (pick <= 0.0) return sample_weibull(rng, c.lambda, c.k);
  }
  const auto& last = params.components.back();
  return sample_weibull(rng, last.lambda, last.k);
}

BehavioralLog simulate_logs(const GroundTruthModel& model,
                            const SimulateOptions& options) {
  const int cats = model.category_count();
  if (cats < 1) throw ValidationError("model needs at least one category");
  if (model.users < 0) throw ValidationError("user count must be non-negative");
  if (!(model.horizon_days > 0.0)) throw ValidationError("horizon must be positive");
  if (model.network.categories != cats ||
      model.kernels.categories != cats) {
    throw ValidationError("model pieces disagree on the category count");
  }
  for (double m : model.mu0) {
    if (!(m >= 0.0)) throw ValidationError("base rates must be non-negative");
  }

  BehavioralLog log;
  log.window_days = model.horizon_days;
  for (int c = 0; c < cats; ++c) {
    log.categories.intern(model.category_ids.empty()
                              ? padded_id("c", c, 1)
                              : model.category_ids[c]);
  }

  const int width = id_width(std::max(1, model.users - 1));
  log.user_ids.reserve(model.users);
  for (int u = 0; u < model.users; ++u) {
    log.user_ids.push_back(padded_id("u", u, width));
    log.user_index.emplace(log.user_ids.back(), u);
  }
  log.events.resize(model.users);

  parallel_for(static_cast<std::size_t>(model.users), options.threads, 1,
               [&](std::size_t begin, std::size_t end) {
                 for (std::size_t u = begin; u < end; ++u) {
                   Rng rng = Rng::substream(options.seed, u);
                   simulate_user(model, options.lookahead_days, rng,
                                 &log.events[u]);
                 }
               });
  return log;
}

BehavioralLog inject_noise(const BehavioralLog& log, double promo_rate,
                           int reseller_count, std::uint64_t seed) {
  if (promo_rate < 0.0 || promo_rate > 1.0) {
    throw ValidationError("promo rate must lie in [0, 1]");
  }
  if (reseller_count < 0 || reseller_count > log.user_count()) {
    throw ValidationError("reseller count must lie in [0, user count]");
  }
  if (reseller_count > 0 && log.category_count() == 0) {
    throw ValidationError("cannot add resellers to a log without categories");
  }

  BehavioralLog out = log;
  Rng rng(seed);
  for (auto& seq : out.events) {
    for (Event& ev : seq) {
      if (promo_rate > 0.0 && rng.bernoulli(promo_rate)) ev.promo = true;
    }
  }

  const int cats = out.category_count();
  const double horizon = out.window_days;
  const int width = id_width(std::max(1, reseller_count - 1));
  for (int i = 0; i < reseller_count; ++i) {
    std::vector<Event> seq;
    const int burst_cat = i % cats;
    const double spacing = std::min(0.25, horizon / 24.0);
    const double start =
        horizon > 7.0 ? rng.uniform(0.0, horizon - 7.0) : 0.0;
    for (int j = 0; j < 12; ++j) {
      Event ev;
      ev.t = start + j * spacing;
      ev.category = burst_cat;
      seq.push_back(ev);
    }
    if (cats > 1) {
      // cross-category purchases prove that flagging removes the whole user
      for (int j = 0; j < 2; ++j) {
        Event ev;
        ev.t = rng.uniform(0.0, horizon);
        ev.category = (burst_cat + 1) % cats;
        seq.push_back(ev);
      }
    }
    std::sort(seq.begin(), seq.end(),
              [](const Event& a, const Event& b) { return a.t < b.t; });
    out.user_index.emplace(padded_id("rs", i, width),
                           static_cast<int>(out.user_ids.size()));
    out.user_ids.push_back(padded_id("rs", i, width));
    out.events.push_back(std::move(seq));
  }
  return out;
}

std::string model_to_json(const GroundTruthModel& model) {
  json j;
  j["users"] = model.users;
  j["horizon_days"] = model.horizon_days;
  j["mu0"] = model.mu0;
  json rows = json::array();
  for (int c = 0; c < model.network.categories; ++c) {
    json row = json::array();
    for (int cp = 0; cp < model.network.categories; ++cp) {
      row.push_back(model.network.at(c, cp));
    }
    rows.push_back(std::move(row));
  }
  j["beta"] = std::move(rows);
  j["kernels"] = json::parse(kernel_bank_to_json(model.kernels));
  if (!model.category_ids.empty()) j["category_ids"] = model.category_ids;
  return j.dump(2);
}

GroundTruthModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model json: ") + e.what());
  }
  GroundTruthModel model;
  model.users = j.at("users").get<int>();
  model.horizon_days = j.at("horizon_days").get<double>();
  model.mu0 = j.at("mu0").get<std::vector<double>>();
  const int cats = static_cast<int>(model.mu0.size());

  model.network.categories = cats;
  model.network.estimator = "ground-truth";
  const json& rows = j.at("beta");
  if (static_cast<int>(rows.size()) != cats) throw DataError("beta row count mismatch");
  for (const json& row : rows) {
    if (static_cast<int>(row.size()) != cats) throw DataError("beta column count mismatch");
    for (const json& v : row) {
      const double b = v.get<double>();
      if (!(b >= 0.0)) throw DataError("beta entries must be non-negative");
      model.network.beta.push_back(b);
    }
  }
  model.kernels = kernel_bank_from_json(j.at("kernels").dump());
  if (model.kernels.categories != cats) {
    throw DataError("kernel bank category count mismatch");
  }
  if (j.contains("category_ids")) {
    model.category_ids = j.at("category_ids").get<std::vector<std::string>>();
    if (static_cast<int>(model.category_ids.size()) != cats) {
      throw DataError("category id count mismatch");
    }
  }
  return model;
}

}  // namespace audience
