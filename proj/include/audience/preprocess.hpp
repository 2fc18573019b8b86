#pragma once

#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "audience/events.hpp"

namespace audience {

/// One-to-one attribution between a source category and a target category
/// for a single user. Every pair satisfies source_t < target_t < source_t + window.
struct MatchedPair {
  double source_t = 0.0;
  double target_t = 0.0;

  double gap() const { return target_t - source_t; }
};

struct Matching {
  int user = -1;
  int source_category = -1;
  int target_category = -1;
  double window = 10.0;
  std::vector<MatchedPair> pairs;

  bool empty() const { return pairs.empty(); }
  std::size_t size() const { return pairs.size(); }
};

/// Keyed by (target, source): the matching for key (c, c') pairs purchases
/// in c' with later purchases in c.
using MatchingKey = std::pair<int, int>;
using MatchingMap = std::map<MatchingKey, std::vector<Matching>>;

/// Drops every event with promo_flag set. Users left with no events are
/// dropped from the log; the category vocabulary and window are kept.
BehavioralLog filter_promotions(const BehavioralLog& log);

struct ResellerFilter {
  BehavioralLog log;
  std::set<std::string> removed_users;
};

/// Removes every transaction of users who bought `threshold` or more items
/// of one category inside any sliding window of `window` days.
ResellerFilter filter_resellers(const BehavioralLog& log, int threshold = 10,
                                double window = 7.0);

/// Greedy nearest-successor matching for one user: sources ascending, each
/// paired with the earliest unconsumed strictly-later target within `window`.
Matching match_attribution(const BehavioralLog& log, int user, int source_category,
                           int target_category, double window = 10.0);

/// match_attribution over every ordered pair of distinct categories and every
/// user. Empty matchings are omitted.
MatchingMap all_matchings(const BehavioralLog& log, double window = 10.0,
                          int threads = 1);

/// Audit dump: user_id,source_category,target_category,t_source,t_target.
void write_matchings_csv(std::ostream& out, const BehavioralLog& log,
                         const MatchingMap& matchings);

}  // namespace audience
