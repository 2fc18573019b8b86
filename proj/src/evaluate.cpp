#include "audience/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>

#include "audience/parallel.hpp"
#include "audience/rng.hpp"

namespace audience {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

EvalProtocol split_protocol(const BehavioralLog& log, double test_days,
                            double segment_len, int segments) {
  if (!(segment_len > 0.0)) throw ValidationError("segment length must be positive");
  if (segments < 1) throw ValidationError("need at least one test segment");
  if (test_days < 0.0) throw ValidationError("test span must be non-negative");

  EvalProtocol p;
  p.segment_len = segment_len;
  p.segments = segments;
  // the configured span must still hold all segments end to end
  const double span = std::max(test_days, segments * segment_len);
  p.train_end = log.window_days - span;
  if (p.train_end < segment_len) {
    throw ValidationError("log too short: train span does not cover one segment");
  }

  const int windows = static_cast<int>(p.train_end / segment_len);
  const double covered = windows * segment_len;
  p.p_c.assign(log.category_count(), 0.0);
  for (const auto& seq : log.events) {
    for (const Event& ev : seq) {
      if (ev.t < covered) p.p_c[ev.category] += 1.0;
    }
  }
  for (double& v : p.p_c) v /= windows;

  for (const auto& seq : log.events) {
    bool in_train = false;
    bool in_test = false;
    for (const Event& ev : seq) {
      (ev.t < p.train_end ? in_train : in_test) = true;
    }
    if (in_test && !in_train) ++p.train_violations;
  }
  return p;
}

BehavioralLog truncate_log(const BehavioralLog& log, double t) {
  if (t < 0.0) throw ValidationError("truncation point must be non-negative");
  BehavioralLog out;
  out.categories = log.categories;
  out.user_ids = log.user_ids;
  out.user_index = log.user_index;
  out.window_days = t;
  out.events.resize(log.events.size());
  for (std::size_t u = 0; u < log.events.size(); ++u) {
    const auto& seq = log.events[u];
    const auto end = std::lower_bound(
        seq.begin(), seq.end(), t,
        [](const Event& ev, double v) { return ev.t < v; });
    out.events[u].assign(seq.begin(), end);
  }
  return out;
}

PrecisionRecall precision_recall(const Audience& audience,
                                 const std::vector<char>& purchased,
                                 const BehavioralLog& log) {
  std::int64_t purchasers = std::count(purchased.begin(), purchased.end(), char(1));
  if (purchasers == 0) {
    throw ValidationError("recall is undefined without purchasers");
  }
  PrecisionRecall pr;
  for (const AudienceMember& m : audience.members) {
    const int u = log.find_user(m.user_id);
    if (u >= 0 && purchased[u]) ++pr.hits;
  }
  pr.precision = audience.members.empty()
                     ? 0.0
                     : static_cast<double>(pr.hits) /
                           static_cast<double>(audience.members.size());
  pr.recall = static_cast<double>(pr.hits) / static_cast<double>(purchasers);
  return pr;
}

std::vector<char> cohort_assign(const BehavioralLog& log, int category,
                                double segment_start) {
  std::vector<char> nc(log.user_count(), 1);
  for (int u = 0; u < log.user_count(); ++u) {
    for (const Event& ev : log.events[u]) {
      if (ev.t >= segment_start) break;
      if (ev.category == category) {
        nc[u] = 0;
        break;
      }
    }
  }
  return nc;
}

IntensityMatrix baseline_top(const BehavioralLog& log, double t, double window) {
  if (!(window > 0.0)) throw ValidationError("count window must be positive");
  IntensityMatrix m;
  m.categories = log.category_count();
  m.tick = t;
  m.user_ids = log.user_ids;
  m.lambda.assign(log.user_ids.size() * static_cast<std::size_t>(m.categories), 0.0);
  const double lo = window == kInf ? -kInf : t - window;
  for (int u = 0; u < log.user_count(); ++u) {
    for (const Event& ev : log.events[u]) {
      if (ev.t >= t) break;
      if (ev.t < lo) continue;
      m.lambda[static_cast<std::size_t>(u) * m.categories + ev.category] += 1.0;
    }
  }
  return m;
}

std::vector<double> count_snapshot(const BehavioralLog& log, double t) {
  const int cats = log.category_count();
  std::vector<double> counts(log.user_ids.size() * static_cast<std::size_t>(cats), 0.0);
  for (int u = 0; u < log.user_count(); ++u) {
    for (const Event& ev : log.events[u]) {
      if (ev.t >= t) break;
      counts[static_cast<std::size_t>(u) * cats + ev.category] += 1.0;
    }
  }
  return counts;
}

namespace {

/// In-place SPD solve of A x = b via Cholesky, A is n x n row-major.
void cholesky_solve(std::vector<double>& a, std::vector<double>& b, int n) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k) {
        s -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
      }
      if (i == j) {
        if (s <= 0.0) throw NumericalError("factorization lost positive definiteness");
        a[static_cast<std::size_t>(i) * n + j] = std::sqrt(s);
      } else {
        a[static_cast<std::size_t>(i) * n + j] = s / a[static_cast<std::size_t>(j) * n + j];
      }
    }
  }
  for (int i = 0; i < n; ++i) {  // L y = b
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= a[static_cast<std::size_t>(i) * n + k] * b[k];
    b[i] = s / a[static_cast<std::size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {  // L^T x = y
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= a[static_cast<std::size_t>(k) * n + i] * b[k];
    b[i] = s / a[static_cast<std::size_t>(i) * n + i];
  }
}

double mf_objective(const std::vector<double>& counts, const std::vector<double>& x,
                    const std::vector<double>& y, std::size_t users, int cats,
                    int rank, double reg) {
  double obj = 0.0;
  for (std::size_t u = 0; u < users; ++u) {
    for (int c = 0; c < cats; ++c) {
      double s = 0.0;
      for (int r = 0; r < rank; ++r) {
        s += x[u * rank + r] * y[static_cast<std::size_t>(c) * rank + r];
      }
      const double n = counts[u * cats + c];
      const double pref = n > 0.0 ? 1.0 : 0.0;
      const double e = pref - s;
      obj += (1.0 + n) * e * e;
    }
  }
  double norms = 0.0;
  for (double v : x) norms += v * v;
  for (double v : y) norms += v * v;
  return obj + reg * norms;
}

}  // namespace

IntensityMatrix baseline_mf(const std::vector<double>& counts,
                            const std::vector<std::string>& user_ids,
                            int categories, double tick, const MfOptions& options,
                            std::vector<double>* objective_trace) {
  const std::size_t users = user_ids.size();
  if (categories < 1) throw ValidationError("factorization needs categories");
  if (counts.size() != users * static_cast<std::size_t>(categories)) {
    throw ValidationError("count snapshot size mismatch");
  }
  for (double v : counts) {
    if (!(v >= 0.0)) throw ValidationError("counts must be non-negative");
  }
  const int rank = options.rank;
  if (rank < 1) throw ValidationError("factorization rank must be positive");

  Rng rng(options.seed);
  std::vector<double> x(users * static_cast<std::size_t>(rank), 0.0);
  std::vector<double> y(static_cast<std::size_t>(categories) * rank);
  const double scale = 0.1 / std::sqrt(static_cast<double>(rank));
  for (double& v : y) v = scale * rng.normal();

  std::vector<double> gram(static_cast<std::size_t>(rank) * rank);
  std::vector<double> a(gram.size());
  std::vector<double> b(rank);
  double prev_obj = kInf;

  const auto accumulate_gram = [&](const std::vector<double>& f, std::size_t rows) {
    std::fill(gram.begin(), gram.end(), 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* v = &f[i * rank];
      for (int p = 0; p < rank; ++p) {
        for (int q = 0; q <= p; ++q) {
          gram[static_cast<std::size_t>(p) * rank + q] += v[p] * v[q];
        }
      }
    }
    for (int p = 0; p < rank; ++p) {
      for (int q = p + 1; q < rank; ++q) {
        gram[static_cast<std::size_t>(p) * rank + q] =
            gram[static_cast<std::size_t>(q) * rank + p];
      }
    }
  };

  const auto solve_side = [&](std::vector<double>& target, std::size_t target_rows,
                              const std::vector<double>& fixed, bool user_side) {
    accumulate_gram(fixed, user_side ? static_cast<std::size_t>(categories) : users);
    for (std::size_t i = 0; i < target_rows; ++i) {
      a = gram;
      for (int r = 0; r < rank; ++r) {
        a[static_cast<std::size_t>(r) * rank + r] += options.reg;
        b[r] = 0.0;
      }
      const std::size_t others = user_side ? static_cast<std::size_t>(categories) : users;
      for (std::size_t j = 0; j < others; ++j) {
        const double n = user_side ? counts[i * categories + j]
                                   : counts[j * categories + i];
        if (n <= 0.0) continue;
        const double* v = &fixed[j * rank];
        // confidence 1 + n: the gram already covers weight 1, add the rest
        for (int p = 0; p < rank; ++p) {
          for (int q = 0; q <= p; ++q) {
            a[static_cast<std::size_t>(p) * rank + q] += n * v[p] * v[q];
          }
          b[p] += (1.0 + n) * v[p];
        }
      }
      for (int p = 0; p < rank; ++p) {
        for (int q = p + 1; q < rank; ++q) {
          a[static_cast<std::size_t>(p) * rank + q] =
              a[static_cast<std::size_t>(q) * rank + p];
        }
      }
      cholesky_solve(a, b, rank);
      std::copy(b.begin(), b.end(), target.begin() + i * rank);
    }
  };

  for (int sweep = 0; sweep < options.iterations; ++sweep) {
    solve_side(x, users, y, true);
    solve_side(y, static_cast<std::size_t>(categories), x, false);
    const double obj = mf_objective(counts, x, y, users, categories, rank, options.reg);
    if (objective_trace) objective_trace->push_back(obj);
    if (obj > prev_obj * (1.0 + 1e-9) + 1e-9) {
      throw NumericalError("factorization objective increased between sweeps");
    }
    prev_obj = obj;
  }

  IntensityMatrix m;
  m.categories = categories;
  m.tick = tick;
  m.user_ids = user_ids;
  m.lambda.assign(users * static_cast<std::size_t>(categories), 0.0);
  for (std::size_t u = 0; u < users; ++u) {
    for (int c = 0; c < categories; ++c) {
      double s = 0.0;
      for (int r = 0; r < rank; ++r) {
        s += x[u * rank + r] * y[static_cast<std::size_t>(c) * rank + r];
      }
      m.lambda[u * categories + c] = s;
    }
  }
  return m;
}

IntensityMatrix baseline_buy_it_again(const BehavioralLog& log, double t,
                                      double delta, double prior_days) {
  if (!(t > 0.0)) throw ValidationError("evaluation tick must be positive");
  if (!(delta > 0.0)) throw ValidationError("prediction window must be positive");
  if (prior_days < 0.0) throw ValidationError("prior strength must be non-negative");

  const int cats = log.category_count();
  const std::vector<double> counts = count_snapshot(log, t);
  std::vector<double> prior_rate(cats, 0.0);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    prior_rate[i % cats] += counts[i];
  }
  const double users = static_cast<double>(log.user_count());
  for (double& r : prior_rate) r = users > 0.0 ? r / (users * t) : 0.0;

  IntensityMatrix m;
  m.categories = cats;
  m.tick = t;
  m.user_ids = log.user_ids;
  m.lambda.assign(counts.size(), 0.0);
  for (int u = 0; u < log.user_count(); ++u) {
    for (int c = 0; c < cats; ++c) {
      const std::size_t idx = static_cast<std::size_t>(u) * cats + c;
      const double rate = (counts[idx] + prior_days * prior_rate[c]) / (t + prior_days);
      m.lambda[idx] = 1.0 - std::exp(-rate * delta);
    }
  }
  return m;
}

namespace {

IntensityMatrix restrict_users(const IntensityMatrix& m,
                               const std::vector<int>& keep) {
  IntensityMatrix out;
  out.categories = m.categories;
  out.grain = m.grain;
  out.cells = m.cells;
  out.tick = m.tick;
  out.user_ids.reserve(keep.size());
  out.lambda.reserve(keep.size() * static_cast<std::size_t>(m.categories));
  for (int u : keep) {
    out.user_ids.push_back(m.user_ids[u]);
    const double* row = &m.lambda[static_cast<std::size_t>(u) * m.categories];
    out.lambda.insert(out.lambda.end(), row, row + m.categories);
  }
  return out;
}

struct Accumulator {
  double precision_sum = 0.0;
  double recall_sum = 0.0;
  std::int64_t included = 0;
  std::int64_t excluded = 0;
};

}  // namespace

ExperimentResult run_experiment(const BehavioralLog& log,
                                const EvalProtocol& protocol,
                                const std::vector<ExperimentMethod>& methods,
                                const ExperimentOptions& options) {
  const int cats = log.category_count();
  if (static_cast<int>(protocol.p_c.size()) != cats) {
    throw ValidationError("protocol category count does not match the log");
  }
  if (protocol.train_end + protocol.segments * protocol.segment_len >
      log.window_days + 1e-9) {
    throw ValidationError("protocol segments run past the observation window");
  }
  if (methods.empty()) throw ValidationError("no methods to evaluate");

  // ranking universe: users present in train
  std::vector<int> candidates;
  std::vector<char> is_candidate(log.user_count(), 0);
  for (int u = 0; u < log.user_count(); ++u) {
    if (!log.events[u].empty() && log.events[u].front().t < protocol.train_end) {
      candidates.push_back(u);
      is_candidate[u] = 1;
    }
  }

  const std::vector<std::string> cohort_names =
      options.cohorts ? std::vector<std::string>{"all", "nc", "oc"}
                      : std::vector<std::string>{"all"};
  const std::size_t n_k = protocol.reach_multipliers.size();
  std::vector<Accumulator> acc(methods.size() * cohort_names.size() * n_k);
  const auto acc_at = [&](std::size_t m, std::size_t coh, std::size_t k) -> Accumulator& {
    return acc[(m * cohort_names.size() + coh) * n_k + k];
  };

  ExperimentResult result;
  result.train_violations = protocol.train_violations;

  for (int seg = 0; seg < protocol.segments; ++seg) {
    const double seg_start = protocol.segment_start(seg);
    const double seg_end = seg_start + protocol.segment_len;
    const BehavioralLog view = truncate_log(log, seg_start);
    for (const auto& seq : view.events) {
      if (!seq.empty() && seq.back().t >= seg_start) {
        throw std::logic_error("leakage guard tripped: event at or after segment start");
      }
    }

    // segment purchasers among candidates, and the NC tags, per category
    std::vector<std::vector<char>> purchased(cats,
                                             std::vector<char>(log.user_count(), 0));
    for (int u : candidates) {
      const auto& seq = log.events[u];
      auto it = std::lower_bound(seq.begin(), seq.end(), seg_start,
                                 [](const Event& ev, double v) { return ev.t < v; });
      for (; it != seq.end() && it->t < seg_end; ++it) {
        purchased[it->category][u] = 1;
      }
    }
    std::vector<std::vector<char>> nc(cats);
    parallel_for(static_cast<std::size_t>(cats), options.threads, 1,
                 [&](std::size_t begin, std::size_t end) {
                   for (std::size_t c = begin; c < end; ++c) {
                     nc[c] = cohort_assign(view, static_cast<int>(c), seg_start);
                   }
                 });

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      const IntensityMatrix scores = methods[mi].score(view, seg_start);
      if (scores.user_ids != log.user_ids || scores.categories != cats) {
        throw ValidationError("method '" + methods[mi].name +
                              "' returned a misaligned score matrix");
      }
      const IntensityMatrix ranked = restrict_users(scores, candidates);

      for (int c = 0; c < cats; ++c) {
        for (std::size_t ki = 0; ki < n_k; ++ki) {
          const std::int64_t reach = std::max<std::int64_t>(
              1, std::llround(protocol.reach_multipliers[ki] * protocol.p_c[c]));
          const Audience audience = rank_audience(ranked, c, reach);

          for (std::size_t coh = 0; coh < cohort_names.size(); ++coh) {
            std::vector<char> target = purchased[c];
            if (cohort_names[coh] == "nc") {
              for (int u = 0; u < log.user_count(); ++u) {
                target[u] = target[u] && nc[c][u];
              }
            } else if (cohort_names[coh] == "oc") {
              for (int u = 0; u < log.user_count(); ++u) {
                target[u] = target[u] && !nc[c][u];
              }
            }
            const std::int64_t purchasers =
                std::count(target.begin(), target.end(), char(1));
            if (purchasers == 0) {
              ++acc_at(mi, coh, ki).excluded;
              continue;
            }
            const PrecisionRecall pr = precision_recall(audience, target, log);
            MetricsRow row;
            row.method = methods[mi].name;
            row.cohort = cohort_names[coh];
            row.k = protocol.reach_multipliers[ki];
            row.segment = seg;
            row.category = c;
            row.reach = static_cast<std::int64_t>(audience.members.size());
            row.hits = pr.hits;
            row.purchasers = purchasers;
            row.precision = pr.precision;
            row.recall = pr.recall;
            result.rows.push_back(std::move(row));
            Accumulator& ac = acc_at(mi, coh, ki);
            ac.precision_sum += pr.precision;
            ac.recall_sum += pr.recall;
            ++ac.included;
          }
        }
      }
    }
  }

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (std::size_t coh = 0; coh < cohort_names.size(); ++coh) {
      for (std::size_t ki = 0; ki < n_k; ++ki) {
        const Accumulator& ac = acc_at(mi, coh, ki);
        SummaryRow s;
        s.method = methods[mi].name;
        s.cohort = cohort_names[coh];
        s.k = protocol.reach_multipliers[ki];
        s.precision = ac.included ? ac.precision_sum / ac.included : 0.0;
        s.recall = ac.included ? ac.recall_sum / ac.included : 0.0;
        s.included = ac.included;
        s.excluded = ac.excluded;
        result.summary.push_back(std::move(s));
      }
    }
  }
  return result;
}

void metrics_to_csv(const ExperimentResult& result, std::ostream& out) {
  out << "method,cohort,k,segment,category,precision,recall\n";
  for (const MetricsRow& r : result.rows) {
    out << r.method << ',' << r.cohort << ',' << format_double(r.k) << ','
        << r.segment << ',' << r.category << ',' << format_double(r.precision)
        << ',' << format_double(r.recall) << '\n';
  }
}

void print_summary(const ExperimentResult& result, std::ostream& out) {
  std::vector<double> ks;
  for (const SummaryRow& s : result.summary) {
    if (std::find(ks.begin(), ks.end(), s.k) == ks.end()) ks.push_back(s.k);
  }
  out << std::left << std::setw(14) << "method" << std::setw(8) << "cohort";
  for (double k : ks) {
    out << std::right << std::setw(10) << ("P@" + format_double(k))
        << std::setw(10) << ("R@" + format_double(k));
  }
  out << '\n';

  for (std::size_t i = 0; i < result.summary.size();) {
    const SummaryRow& head = result.summary[i];
    out << std::left << std::setw(14) << head.method << std::setw(8) << head.cohort;
    for (double k : ks) {
      bool found = false;
      for (std::size_t j = i; j < result.summary.size(); ++j) {
        const SummaryRow& s = result.summary[j];
        if (s.method != head.method || s.cohort != head.cohort) break;
        if (s.k == k) {
          out << std::right << std::fixed << std::setprecision(4) << std::setw(10)
              << s.precision << std::setw(10) << s.recall;
          found = true;
          break;
        }
      }
      if (!found) out << std::right << std::setw(10) << "-" << std::setw(10) << "-";
    }
    out << '\n';
    out.unsetf(std::ios::fixed);
    while (i < result.summary.size() && result.summary[i].method == head.method &&
           result.summary[i].cohort == head.cohort) {
      ++i;
    }
  }
}

}  // namespace audience
