#include "audience/preprocess.hpp"

#include <algorithm>
#include <utility>

#include "audience/errors.hpp"
#include "audience/parallel.hpp"

namespace audience {

namespace {

/// Rebuilds a log around per-user surviving events. Users left empty are
/// dropped; category vocabulary and window length are unchanged.
BehavioralLog rebuild(const BehavioralLog& source,
                      std::vector<std::vector<Event>> kept) {
  BehavioralLog out;
  out.categories = source.categories;
  out.window_days = source.window_days;
  for (int u = 0; u < source.user_count(); ++u) {
    if (kept[u].empty()) continue;
    out.user_index.emplace(source.user_ids[u], static_cast<int>(out.user_ids.size()));
    out.user_ids.push_back(source.user_ids[u]);
    out.events.push_back(std::move(kept[u]));
  }
  return out;
}

}  // namespace

BehavioralLog filter_promotions(const BehavioralLog& log) {
  std::vector<std::vector<Event>> kept(log.user_count());
  for (int u = 0; u < log.user_count(); ++u) {
    for (const Event& ev : log.events[u]) {
      if (!ev.promo) kept[u].push_back(ev);
    }
  }
  return rebuild(log, std::move(kept));
}

ResellerFilter filter_resellers(const BehavioralLog& log, int threshold,
                                double window) {
  if (threshold < 1) throw ValidationError("re-seller threshold must be >= 1");
  if (!(window > 0.0)) throw ValidationError("re-seller window must be positive");

  ResellerFilter result;
  std::vector<std::vector<Event>> kept(log.user_count());
  std::vector<double> times;  // per (user, category), reused
  for (int u = 0; u < log.user_count(); ++u) {
    bool flagged = false;
    for (int c = 0; c < log.category_count() && !flagged; ++c) {
      times.clear();
      for (const Event& ev : log.events[u]) {
        if (ev.category == c) times.push_back(ev.t);
      }
      // sequences are time-sorted, so times is too; a run of `threshold`
      // purchases fits one window iff its endpoints are < `window` apart
      const int n = static_cast<int>(times.size());
      for (int i = 0; i + threshold - 1 < n; ++i) {
        if (times[i + threshold - 1] - times[i] < window) {
          flagged = true;
          break;
        }
      }
    }
    if (flagged) {
      result.removed_users.insert(log.user_ids[u]);
    } else {
      kept[u] = log.events[u];
    }
  }
  result.log = rebuild(log, std::move(kept));
  return result;
}

Matching match_attribution(const BehavioralLog& log, int user, int source_category,
                           int target_category, double window) {
  if (source_category == target_category) {
    throw ValidationError("attribution matching is defined for distinct categories");
  }
  if (!(window > 0.0)) throw ValidationError("attribution window must be positive");
  if (user < 0 || user >= log.user_count()) {
    throw ValidationError("user index out of range");
  }

  Matching m;
  m.user = user;
  m.source_category = source_category;
  m.target_category = target_category;
  m.window = window;

  std::vector<double> sources;
  std::vector<double> targets;
  for (const Event& ev : log.events[user]) {
    if (ev.category == source_category) sources.push_back(ev.t);
    else if (ev.category == target_category) targets.push_back(ev.t);
  }

  // Greedy over ascending sources; each target consumed at most once.
  // Targets skipped here are <= the current source, hence unusable for any
  // later source as well.
  std::size_t ti = 0;
  for (double t_source : sources) {
    while (ti < targets.size() && targets[ti] <= t_source) ++ti;
    if (ti == targets.size()) break;
    if (targets[ti] < t_source + window) {
      m.pairs.push_back({t_source, targets[ti]});
      ++ti;
    }
  }
  return m;
}

MatchingMap all_matchings(const BehavioralLog& log, double window, int threads) {
  const int cats = log.category_count();
  std::vector<MatchingKey> keys;
  keys.reserve(static_cast<std::size_t>(cats) * (cats - 1));
  for (int c = 0; c < cats; ++c) {
    for (int cp = 0; cp < cats; ++cp) {
      if (c != cp) keys.push_back({c, cp});
    }
  }

  std::vector<std::vector<Matching>> per_key(keys.size());
  parallel_for(keys.size(), threads, 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto [target, source] = keys[i];
      for (int u = 0; u < log.user_count(); ++u) {
        Matching m = match_attribution(log, u, source, target, window);
        if (!m.empty()) per_key[i].push_back(std::move(m));
      }
    }
  });

  MatchingMap out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!per_key[i].empty()) out.emplace(keys[i], std::move(per_key[i]));
  }
  return out;
}

void write_matchings_csv(std::ostream& out, const BehavioralLog& log,
                         const MatchingMap& matchings) {
  out << "user_id,source_category,target_category,t_source,t_target\n";
  for (const auto& [key, per_user] : matchings) {
    const auto& [target, source] = key;
    for (const Matching& m : per_user) {
      for (const MatchedPair& p : m.pairs) {
        out << log.user_ids[m.user] << ',' << log.categories.id(source) << ','
            << log.categories.id(target) << ',' << format_double(p.source_t)
            << ',' << format_double(p.target_t) << '\n';
      }
    }
  }
}

}  // namespace audience
