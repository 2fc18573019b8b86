#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace audience {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);
/// Full-string parse; rejects trailing characters.
bool parse_double(std::string_view text, double* out);

/// One purchase row as read from, or written to, an event file.
struct RawEvent {
  std::string user_id;
  std::string item_id;  // optional, empty when absent
  std::string category_id;
  double timestamp_days = 0.0;
  std::optional<double> price;
  bool promo = false;  // true iff the transaction was a promotional deal
};

/// In-log purchase event. Timestamps are fractional days from the start of
/// the observation window; calendar parsing happens only at ingestion.
struct Event {
  double t = 0.0;
  std::int32_t category = -1;
  bool promo = false;
  std::string item_id;
  std::optional<double> price;
};

/// Bidirectional map between opaque category ids and dense indices.
class CategoryIndex {
 public:
  CategoryIndex() = default;

  /// Returns the dense index, inserting the id if new.
  int intern(const std::string& id);
  /// Returns the dense index or -1.
  int find(const std::string& id) const;
  const std::string& id(int index) const { return ids_.at(index); }
  int size() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }

  /// Optional store-path annotation (taxonomy path the id encodes).
  void set_path(int index, const std::string& path);
  const std::string* path(int index) const;

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, int> index_;
  std::unordered_map<int, std::string> paths_;
};

/// Per-user, time-ordered purchase sequences over an observation window of
/// `window_days` days. Immutable after construction; safe to share across
/// workers.
struct BehavioralLog {
  CategoryIndex categories;
  std::vector<std::string> user_ids;                // dense index -> id
  std::unordered_map<std::string, int> user_index;  // id -> dense index
  std::vector<std::vector<Event>> events;           // per user, sorted by t
  double window_days = 0.0;                         // T

  int user_count() const { return static_cast<int>(user_ids.size()); }
  int category_count() const { return categories.size(); }
  std::size_t event_count() const;
  int find_user(const std::string& id) const;
};

enum class EventFormat { kCsv, kJsonl };

struct IngestOptions {
  bool strict = false;  // strict: abort on first bad row; lenient: skip+count
  /// Override for the window length T; default is max timestamp rounded up.
  std::optional<double> window_days;
  /// When set, timestamps may be ISO dates (YYYY-MM-DD[ hh:mm:ss]) and are
  /// converted to fractional days since this epoch date.
  std::optional<std::string> epoch_date;
  /// When set, category ids must already exist in this index.
  const CategoryIndex* fixed_categories = nullptr;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;  // lenient mode only
};

/// Builds a log from rows. Sorts each user's sequence by timestamp; T is the
/// max timestamp rounded up to a whole day unless overridden.
BehavioralLog make_log(std::vector<RawEvent> rows,
                       std::optional<double> window_days = std::nullopt,
                       const CategoryIndex* fixed_categories = nullptr);

/// Parses an event stream. Malformed rows raise DataError with the line
/// number in strict mode and are counted in lenient mode.
BehavioralLog ingest_events(std::istream& source, EventFormat format,
                            const IngestOptions& options = {},
                            IngestReport* report = nullptr);

BehavioralLog ingest_file(const std::string& path,
                          const IngestOptions& options = {},
                          IngestReport* report = nullptr);

/// Writes the log in the canonical CSV schema:
/// user_id,item_id,category_id,timestamp_days,price,promo_flag
void write_events_csv(const BehavioralLog& log, std::ostream& out);
void write_events_jsonl(const BehavioralLog& log, std::ostream& out);

/// Purchase counts of one category on a uniform grid. Cell s covers
/// [window_end - (S - s) * g, window_end - (S - 1 - s) * g), so the last cell
/// is the most recent; with window_end == S * g this is exactly
/// [s * g, (s + 1) * g). Rows are CSR over users.
struct CountMatrix {
  int category = -1;
  double grain_days = 1.0;  // g
  int cells = 0;            // S
  double window_end = 0.0;  // E
  int user_count = 0;
  std::vector<std::int64_t> row_offsets;  // size user_count + 1
  struct Entry {
    std::int32_t cell;
    std::int32_t count;
  };
  std::vector<Entry> entries;  // per row, ascending cell

  std::int64_t row_begin(int u) const { return row_offsets[u]; }
  std::int64_t row_end(int u) const { return row_offsets[u + 1]; }
  /// Dense row for one user (length `cells`).
  std::vector<std::int64_t> dense_row(int u) const;
  std::int64_t row_sum(int u) const;
};

/// Counts purchases of category c per user on the grid (g, S) ending at
/// window_end (defaults to S * g). Requires g > 0 and, when no explicit
/// window end is given, S * g >= T.
CountMatrix count_matrix(const BehavioralLog& log, int category,
                         double grain_days, int cells,
                         std::optional<double> window_end = std::nullopt);

/// Number of purchases by user u in category c strictly before t.
std::int64_t counts_upto(const BehavioralLog& log, int user, int category,
                         double t);
/// Id-based overload; unknown users have empty histories.
std::int64_t counts_upto(const BehavioralLog& log, const std::string& user_id,
                         int category, double t);

/// Descriptive statistics over a log.
struct StatsReport {
  std::size_t users = 0;
  std::size_t purchases = 0;
  std::map<std::int64_t, std::int64_t> purchases_per_user_hist;
  std::map<std::int64_t, std::int64_t> unique_categories_per_user_hist;
  std::vector<std::int64_t> purchases_per_category;  // by dense index
  // regular = transactions in >= regular_threshold distinct 30-day buckets
  std::int64_t regular_users = 0;
  std::int64_t occasional_users = 0;
  double regular_purchase_share = 0.0;    // defined only when purchases > 0
  double occasional_purchase_share = 0.0;
  std::int64_t head_categories = 0;
  std::int64_t tail_categories = 0;
  double head_purchase_share = 0.0;
  double tail_purchase_share = 0.0;
  bool shares_defined = false;
};

struct StatsOptions {
  int regular_threshold_months = 5;
  std::int64_t head_threshold_purchases = 350000;
};

StatsReport log_stats(const BehavioralLog& log, const StatsOptions& options = {});

/// JSON rendering of the report (stable key order).
std::string stats_to_json(const StatsReport& report,
                          const BehavioralLog& log);

}  // namespace audience
