#include <doctest.h>

#include <cmath>
#include <set>

#include "audience/preprocess.hpp"
#include "audience/simulate.hpp"
#include "oracles.hpp"

using namespace audience;

namespace {

GroundTruthModel poisson_model(int users, double mu, double horizon) {
  GroundTruthModel model;
  model.users = users;
  model.horizon_days = horizon;
  model.mu0 = {mu, mu};
  model.network.categories = 2;
  model.network.estimator = "ground-truth";
  model.network.beta = {0.0, 0.0, 0.0, 0.0};
  model.kernels = KernelBank::uniform(2, WeibullKernel{5.0, 1.0}, "ground-truth");
  return model;
}

GroundTruthModel exciting_model(int users, double horizon) {
  GroundTruthModel model = poisson_model(users, 0.01, horizon);
  model.network.beta = {0.5, 0.0, 0.3, 0.5};  // self-excited, one cross edge
  model.kernels.at(0, 0) = MixtureOfWeibulls{{{10.0, 4.0, 1.0}}};
  model.kernels.at(1, 1) = MixtureOfWeibulls{{{10.0, 4.0, 1.0}}};
  model.kernels.at(1, 0) = WeibullKernel{3.0, 2.0};
  return model;
}

}  // namespace

TEST_SUITE("simulate") {

TEST_CASE("weibull sampling matches the distribution's moments") {
  Rng rng(8);
  const double lambda = 20.0, k = 3.0;
  double acc = 0.0, acc2 = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double x = sample_weibull(rng, lambda, k);
    REQUIRE(x > 0.0);
    acc += x;
    acc2 += x * x;
  }
  const double mean = acc / n;
  const double expected_mean = lambda * std::tgamma(1.0 + 1.0 / k);
  CHECK(mean == doctest::Approx(expected_mean).epsilon(0.02));
  const double var = acc2 / n - mean * mean;
  const double expected_var =
      lambda * lambda *
      (std::tgamma(1.0 + 2.0 / k) - std::pow(std::tgamma(1.0 + 1.0 / k), 2.0));
  CHECK(var == doctest::Approx(expected_var).epsilon(0.08));
}

TEST_CASE("mixture sampling respects component weights") {
  Rng rng(9);
  MixtureOfWeibulls mow{{{5.0, 8.0, 0.25}, {50.0, 8.0, 0.75}}};
  int low = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    if (sample_mow(rng, mow) < 20.0) ++low;
  }
  // shape 8 keeps the modes far apart, so the split is the weight
  CHECK(static_cast<double>(low) / n == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("simulated logs are reproducible and thread-count independent") {
  GroundTruthModel model = exciting_model(60, 90.0);
  SimulateOptions options;
  options.seed = 21;
  BehavioralLog a = simulate_logs(model, options);
  BehavioralLog b = simulate_logs(model, options);
  options.threads = 4;
  BehavioralLog c = simulate_logs(model, options);
  REQUIRE(a.user_count() == 60);
  CHECK(a.window_days == 90.0);
  for (const BehavioralLog* other : {&b, &c}) {
    REQUIRE(other->user_count() == a.user_count());
    for (int u = 0; u < a.user_count(); ++u) {
      REQUIRE(other->events[u].size() == a.events[u].size());
      for (std::size_t i = 0; i < a.events[u].size(); ++i) {
        CHECK(other->events[u][i].t == a.events[u][i].t);
        CHECK(other->events[u][i].category == a.events[u][i].category);
      }
    }
  }
  SimulateOptions reseeded;
  reseeded.seed = 22;
  BehavioralLog d = simulate_logs(model, reseeded);
  CHECK(d.event_count() != a.event_count());
}

TEST_CASE("a pure poisson model hits its expected event count") {
  const double mu = 0.05, horizon = 100.0;
  const int users = 400;
  BehavioralLog log = simulate_logs(poisson_model(users, mu, horizon));
  // per category: users * mu * T events, sd sqrt of that
  const double expected = users * mu * horizon;
  for (int c = 0; c < 2; ++c) {
    double count = 0.0;
    for (const auto& seq : log.events) {
      for (const Event& ev : seq) count += ev.category == c ? 1.0 : 0.0;
    }
    CHECK(std::abs(count - expected) < 4.0 * std::sqrt(expected));
  }
  // all timestamps strictly inside the window, sorted per user
  for (const auto& seq : log.events) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      CHECK(seq[i].t >= 0.0);
      CHECK(seq[i].t < horizon);
      if (i) CHECK(seq[i - 1].t <= seq[i].t);
    }
  }
}

TEST_CASE("excited event counts track the branching prediction") {
  GroundTruthModel model = exciting_model(1500, 120.0);
  // expected events per user from the mean-intensity equation
  const auto mean = oracle::volterra_mean_intensity(model.mu0, model.network,
                                                    model.kernels, 120.0, 0.05);
  // clusters inflate the per-run variance well past poisson, so compare the
  // average of several independent runs
  double count[2] = {0.0, 0.0};
  const int runs = 5;
  for (int r = 0; r < runs; ++r) {
    SimulateOptions options;
    options.seed = 100 + static_cast<std::uint64_t>(r);
    BehavioralLog log = simulate_logs(model, options);
    for (const auto& seq : log.events) {
      for (const Event& ev : seq) count[ev.category] += 1.0;
    }
  }
  for (int c = 0; c < 2; ++c) {
    const double expected = oracle::trapezoid(mean[c], 0.05) * model.users * runs;
    CAPTURE(c);
    CAPTURE(expected);
    CHECK(std::abs(count[c] - expected) < 0.08 * expected);
  }
}

TEST_CASE("injected noise flags promos and adds bulk buyers") {
  GroundTruthModel model = poisson_model(300, 0.08, 60.0);
  BehavioralLog clean = simulate_logs(model);
  const std::size_t organic = clean.event_count();
  BehavioralLog noisy = inject_noise(clean, 0.25, 5, 77);

  CHECK(noisy.user_count() == clean.user_count() + 5);
  std::size_t promo = 0, reseller_events = 0, reseller_promo = 0;
  std::set<std::string> reseller_ids;
  for (int u = 0; u < noisy.user_count(); ++u) {
    const bool synthetic = noisy.user_ids[u].rfind("rs", 0) == 0;
    if (synthetic) reseller_ids.insert(noisy.user_ids[u]);
    for (const Event& ev : noisy.events[u]) {
      if (synthetic) {
        ++reseller_events;
        reseller_promo += ev.promo ? 1 : 0;
      } else {
        promo += ev.promo ? 1 : 0;
      }
    }
  }
  REQUIRE(reseller_ids.size() == 5);
  // burst of 12 plus two cross-category purchases per synthetic account
  CHECK(reseller_events == 5 * 14);
  // promo flags only land on organic events, so the velocity filter is what
  // must catch the synthetic accounts
  CHECK(reseller_promo == 0);
  const double rate = static_cast<double>(promo) / static_cast<double>(organic);
  CHECK(rate == doctest::Approx(0.25).epsilon(0.12));

  ResellerFilter f = filter_resellers(noisy, 10, 7.0);
  for (const std::string& id : reseller_ids) {
    CHECK(f.removed_users.count(id) == 1);
  }
  CHECK_THROWS_AS(inject_noise(clean, 1.5, 0, 1), ValidationError);
}

TEST_CASE("ground-truth models survive their json form") {
  GroundTruthModel model = exciting_model(25, 45.0);
  model.category_ids = {"beer", "diapers"};
  GroundTruthModel back = model_from_json(model_to_json(model));
  CHECK(back.users == 25);
  CHECK(back.horizon_days == 45.0);
  CHECK(back.mu0 == model.mu0);
  CHECK(back.network.beta == model.network.beta);
  CHECK(back.category_ids == model.category_ids);
  for (int c = 0; c < 2; ++c) {
    for (int cp = 0; cp < 2; ++cp) {
      for (double age : {0.5, 3.0, 11.0}) {
        CHECK(eval_kernel(back.kernels.at(c, cp), age) ==
              eval_kernel(model.kernels.at(c, cp), age));
      }
    }
  }
  BehavioralLog a = simulate_logs(model);
  BehavioralLog b = simulate_logs(back);
  REQUIRE(a.event_count() == b.event_count());
}

}  // TEST_SUITE
