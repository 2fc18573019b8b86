#include "audience/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "audience/errors.hpp"

namespace audience {

namespace {

using nlohmann::json;

// days_from_civil, Howard Hinnant's algorithm
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool parse_date(const std::string& s, std::int64_t* day, double* day_frac) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  const int n = std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &h, &mi, &se);
  if (n != 3 && n != 6) return false;
  if (mo < 1 || mo > 12 || d < 1 || d > 31) return false;
  *day = days_from_civil(y, mo, d);
  *day_frac = (h * 3600.0 + mi * 60.0 + se) / 86400.0;
  return true;
}

}  // namespace

bool parse_double(std::string_view s, double* out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, *out);
  return ec == std::errc{} && ptr == last;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

namespace {

// Minimal CSV field splitter with RFC-style quoting.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

struct TimestampParser {
  std::int64_t epoch_day = 0;
  bool has_epoch = false;

  explicit TimestampParser(const IngestOptions& options) {
    if (options.epoch_date) {
      std::int64_t day = 0;
      double frac = 0.0;
      if (!parse_date(*options.epoch_date, &day, &frac)) {
        throw ValidationError("bad epoch date: " + *options.epoch_date);
      }
      epoch_day = day;
      has_epoch = true;
    }
  }

  bool parse(const std::string& s, double* out) const {
    if (parse_double(s, out)) return true;
    if (!has_epoch) return false;
    std::int64_t day = 0;
    double frac = 0.0;
    if (!parse_date(s, &day, &frac)) return false;
    *out = static_cast<double>(day - epoch_day) + frac;
    return true;
  }
};

bool parse_promo(const std::string& s, bool* out) {
  if (s.empty() || s == "0" || s == "false" || s == "False") {
    *out = false;
    return true;
  }
  if (s == "1" || s == "true" || s == "True") {
    *out = true;
    return true;
  }
  return false;
}

[[noreturn]] void row_error(bool /*strict*/, std::size_t line_no, const std::string& what) {
  throw DataError("line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

int CategoryIndex::intern(const std::string& id) {
  auto it = index_.find(id);
  if (it != index_.end()) return it->second;
  const int idx = static_cast<int>(ids_.size());
  ids_.push_back(id);
  index_.emplace(id, idx);
  return idx;
}

int CategoryIndex::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

void CategoryIndex::set_path(int index, const std::string& path) {
  paths_[index] = path;
}

const std::string* CategoryIndex::path(int index) const {
  auto it = paths_.find(index);
  return it == paths_.end() ? nullptr : &it->second;
}

std::size_t BehavioralLog::event_count() const {
  std::size_t n = 0;
  for (const auto& seq : events) n += seq.size();
  return n;
}

int BehavioralLog::find_user(const std::string& id) const {
  auto it = user_index.find(id);
  return it == user_index.end() ? -1 : it->second;
}

BehavioralLog make_log(std::vector<RawEvent> rows,
                       std::optional<double> window_days,
                       const CategoryIndex* fixed_categories) {
  BehavioralLog log;
  if (fixed_categories) log.categories = *fixed_categories;
  double max_t = 0.0;
  for (auto& row : rows) {
    if (row.timestamp_days < 0) {
      throw DataError("negative timestamp for user " + row.user_id);
    }
    int user = log.find_user(row.user_id);
    if (user < 0) {
      user = log.user_count();
      log.user_index.emplace(row.user_id, user);
      log.user_ids.push_back(row.user_id);
      log.events.emplace_back();
    }
    int cat;
    if (fixed_categories) {
      cat = log.categories.find(row.category_id);
      if (cat < 0) throw DataError("unknown category: " + row.category_id);
    } else {
      cat = log.categories.intern(row.category_id);
    }
    Event ev;
    ev.t = row.timestamp_days;
    ev.category = cat;
    ev.promo = row.promo;
    ev.item_id = std::move(row.item_id);
    ev.price = row.price;
    max_t = std::max(max_t, ev.t);
    log.events[user].push_back(std::move(ev));
  }
  for (auto& seq : log.events) {
    std::stable_sort(seq.begin(), seq.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
  }
  if (window_days) {
    // the window is [0, T): every event must lie strictly inside
    if (!rows.empty() && *window_days <= max_t) {
      throw DataError("window length does not cover the latest event");
    }
    log.window_days = *window_days;
  } else if (rows.empty()) {
    log.window_days = 0.0;
  } else {
    log.window_days = std::floor(max_t) + 1.0;  // next whole day after max_t
  }
  return log;
}

BehavioralLog ingest_events(std::istream& source, EventFormat format,
                            const IngestOptions& options, IngestReport* report) {
  TimestampParser timestamps(options);
  std::vector<RawEvent> rows;
  IngestReport local;
  std::string line;
  std::size_t line_no = 0;

  auto handle_bad = [&](const std::string& what) {
    if (options.strict) row_error(true, line_no, what);
    ++local.rows_skipped;
  };

  if (format == EventFormat::kCsv) {
    if (!std::getline(source, line)) {
      // empty source: an empty log is valid
      if (report) *report = local;
      return make_log({}, options.window_days, options.fixed_categories);
    }
    ++line_no;
    auto header = split_csv(line);
    const std::vector<std::string> expected = {"user_id", "item_id", "category_id",
                                               "timestamp_days", "price", "promo_flag"};
    if (header != expected) {
      throw DataError("bad CSV header; expected user_id,item_id,category_id,"
                      "timestamp_days,price,promo_flag");
    }
    while (std::getline(source, line)) {
      ++line_no;
      if (line.empty()) continue;
      ++local.rows_read;
      auto fields = split_csv(line);
      if (fields.size() != 6) {
        handle_bad("expected 6 fields, got " + std::to_string(fields.size()));
        continue;
      }
      RawEvent row;
      row.user_id = fields[0];
      row.item_id = fields[1];
      row.category_id = fields[2];
      if (row.user_id.empty() || row.category_id.empty()) {
        handle_bad("empty user_id or category_id");
        continue;
      }
      if (!timestamps.parse(fields[3], &row.timestamp_days)) {
        handle_bad("bad timestamp: " + fields[3]);
        continue;
      }
      if (!fields[4].empty()) {
        double price;
        if (!parse_double(fields[4], &price)) {
          handle_bad("bad price: " + fields[4]);
          continue;
        }
        row.price = price;
      }
      if (!parse_promo(fields[5], &row.promo)) {
        handle_bad("bad promo_flag: " + fields[5]);
        continue;
      }
      rows.push_back(std::move(row));
    }
  } else {
    while (std::getline(source, line)) {
      ++line_no;
      if (line.empty()) continue;
      ++local.rows_read;
      json obj = json::parse(line, nullptr, false);
      if (obj.is_discarded() || !obj.is_object()) {
        handle_bad("bad JSON object");
        continue;
      }
      RawEvent row;
      try {
        row.user_id = obj.at("user_id").get<std::string>();
        row.category_id = obj.at("category_id").get<std::string>();
        if (obj.contains("item_id") && !obj["item_id"].is_null()) {
          row.item_id = obj["item_id"].get<std::string>();
        }
        const auto& ts = obj.at("timestamp_days");
        if (ts.is_number()) {
          row.timestamp_days = ts.get<double>();
        } else if (!timestamps.parse(ts.get<std::string>(), &row.timestamp_days)) {
          handle_bad("bad timestamp");
          continue;
        }
        if (obj.contains("price") && !obj["price"].is_null()) {
          row.price = obj["price"].get<double>();
        }
        if (obj.contains("promo_flag") && !obj["promo_flag"].is_null()) {
          row.promo = obj["promo_flag"].get<bool>();
        }
      } catch (const json::exception& e) {
        handle_bad(e.what());
        continue;
      }
      rows.push_back(std::move(row));
    }
  }

  if (report) *report = local;
  try {
    return make_log(std::move(rows), options.window_days, options.fixed_categories);
  } catch (const DataError& e) {
    throw DataError(std::string("ingest: ") + e.what());
  }
}

BehavioralLog ingest_file(const std::string& path, const IngestOptions& options,
                          IngestReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  const bool jsonl = path.size() > 6 && path.substr(path.size() - 6) == ".jsonl";
  return ingest_events(in, jsonl ? EventFormat::kJsonl : EventFormat::kCsv,
                       options, report);
}

void write_events_csv(const BehavioralLog& log, std::ostream& out) {
  out << "user_id,item_id,category_id,timestamp_days,price,promo_flag\n";
  for (int u = 0; u < log.user_count(); ++u) {
    for (const Event& ev : log.events[u]) {
      out << csv_escape(log.user_ids[u]) << ',' << csv_escape(ev.item_id) << ','
          << csv_escape(log.categories.id(ev.category)) << ','
          << format_double(ev.t) << ','
          << (ev.price ? format_double(*ev.price) : std::string()) << ','
          << (ev.promo ? "true" : "false") << '\n';
    }
  }
}

void write_events_jsonl(const BehavioralLog& log, std::ostream& out) {
  for (int u = 0; u < log.user_count(); ++u) {
    for (const Event& ev : log.events[u]) {
      json obj;
      obj["user_id"] = log.user_ids[u];
      obj["item_id"] = ev.item_id;
      obj["category_id"] = log.categories.id(ev.category);
      obj["timestamp_days"] = ev.t;
      if (ev.price) obj["price"] = *ev.price;
      else obj["price"] = nullptr;
      obj["promo_flag"] = ev.promo;
      out << obj.dump() << '\n';
    }
  }
}

std::vector<std::int64_t> CountMatrix::dense_row(int u) const {
  std::vector<std::int64_t> row(cells, 0);
  for (std::int64_t i = row_begin(u); i < row_end(u); ++i) {
    row[entries[i].cell] = entries[i].count;
  }
  return row;
}

std::int64_t CountMatrix::row_sum(int u) const {
  std::int64_t s = 0;
  for (std::int64_t i = row_begin(u); i < row_end(u); ++i) s += entries[i].count;
  return s;
}

CountMatrix count_matrix(const BehavioralLog& log, int category,
                         double grain_days, int cells,
                         std::optional<double> window_end) {
  if (grain_days <= 0) throw ValidationError("grain must be positive");
  if (cells < 1) throw ValidationError("cell count must be >= 1");
  const double span = grain_days * cells;
  const double end = window_end.value_or(span);
  if (!window_end && span < log.window_days) {
    throw ValidationError("grid does not cover the window; pass an explicit "
                          "window end to truncate");
  }

  CountMatrix m;
  m.category = category;
  m.grain_days = grain_days;
  m.cells = cells;
  m.window_end = end;
  m.user_count = log.user_count();
  m.row_offsets.resize(log.user_count() + 1, 0);

  const double start = end - span;
  std::vector<std::int32_t> scratch(cells, 0);
  for (int u = 0; u < log.user_count(); ++u) {
    m.row_offsets[u] = static_cast<std::int64_t>(m.entries.size());
    bool touched = false;
    for (const Event& ev : log.events[u]) {
      if (ev.category != category) continue;
      if (ev.t < start || ev.t >= end) continue;
      // half-open cells: cell s covers [start + s*g, start + (s+1)*g)
      int cell = static_cast<int>(std::floor((ev.t - start) / grain_days));
      if (cell >= cells) cell = cells - 1;  // guard fp rounding at the edge
      if (cell < 0) cell = 0;
      ++scratch[cell];
      touched = true;
    }
    if (touched) {
      for (int s = 0; s < cells; ++s) {
        if (scratch[s] > 0) {
          m.entries.push_back({s, scratch[s]});
          scratch[s] = 0;
        }
      }
    }
  }
  m.row_offsets[log.user_count()] = static_cast<std::int64_t>(m.entries.size());
  return m;
}

std::int64_t counts_upto(const BehavioralLog& log, int user, int category,
                         double t) {
  if (user < 0 || user >= log.user_count()) return 0;
  std::int64_t n = 0;
  for (const Event& ev : log.events[user]) {
    if (ev.t >= t) break;  // sequences are sorted
    if (ev.category == category) ++n;
  }
  return n;
}

std::int64_t counts_upto(const BehavioralLog& log, const std::string& user_id,
                         int category, double t) {
  return counts_upto(log, log.find_user(user_id), category, t);
}

StatsReport log_stats(const BehavioralLog& log, const StatsOptions& options) {
  StatsReport r;
  r.users = log.user_count();
  r.purchases_per_category.assign(log.category_count(), 0);

  for (int u = 0; u < log.user_count(); ++u) {
    const auto& seq = log.events[u];
    r.purchases += seq.size();
    ++r.purchases_per_user_hist[static_cast<std::int64_t>(seq.size())];
    std::set<int> cats;
    std::set<int> months;  // 30-day buckets from window start
    for (const Event& ev : seq) {
      ++r.purchases_per_category[ev.category];
      cats.insert(ev.category);
      months.insert(static_cast<int>(ev.t / 30.0));
    }
    ++r.unique_categories_per_user_hist[static_cast<std::int64_t>(cats.size())];
    const bool regular = static_cast<int>(months.size()) >= options.regular_threshold_months;
    if (regular) ++r.regular_users;
    else ++r.occasional_users;
    if (regular) r.regular_purchase_share += static_cast<double>(seq.size());
    else r.occasional_purchase_share += static_cast<double>(seq.size());
  }

  std::int64_t head_purchases = 0;
  for (int c = 0; c < log.category_count(); ++c) {
    if (r.purchases_per_category[c] > options.head_threshold_purchases) {
      ++r.head_categories;
      head_purchases += r.purchases_per_category[c];
    } else {
      ++r.tail_categories;
    }
  }

  if (r.purchases > 0) {
    const double total = static_cast<double>(r.purchases);
    r.regular_purchase_share /= total;
    r.occasional_purchase_share /= total;
    r.head_purchase_share = static_cast<double>(head_purchases) / total;
    r.tail_purchase_share = 1.0 - r.head_purchase_share;
    r.shares_defined = true;
  } else {
    r.regular_purchase_share = r.occasional_purchase_share = 0.0;
    r.head_purchase_share = r.tail_purchase_share = 0.0;
  }
  return r;
}

std::string stats_to_json(const StatsReport& r, const BehavioralLog& log) {
  json j;
  j["users"] = r.users;
  j["purchases"] = r.purchases;
  j["window_days"] = log.window_days;
  json hist = json::object();
  for (const auto& [k, v] : r.purchases_per_user_hist) hist[std::to_string(k)] = v;
  j["purchases_per_user_hist"] = hist;
  json cat_hist = json::object();
  for (const auto& [k, v] : r.unique_categories_per_user_hist) cat_hist[std::to_string(k)] = v;
  j["unique_categories_per_user_hist"] = cat_hist;
  json per_cat = json::object();
  for (int c = 0; c < log.category_count(); ++c) {
    per_cat[log.categories.id(c)] = r.purchases_per_category[c];
  }
  j["purchases_per_category"] = per_cat;
  j["regular_users"] = r.regular_users;
  j["occasional_users"] = r.occasional_users;
  j["head_categories"] = r.head_categories;
  j["tail_categories"] = r.tail_categories;
  if (r.shares_defined) {
    j["regular_purchase_share"] = r.regular_purchase_share;
    j["occasional_purchase_share"] = r.occasional_purchase_share;
    j["head_purchase_share"] = r.head_purchase_share;
    j["tail_purchase_share"] = r.tail_purchase_share;
  } else {
    j["regular_purchase_share"] = nullptr;
    j["occasional_purchase_share"] = nullptr;
    j["head_purchase_share"] = nullptr;
    j["tail_purchase_share"] = nullptr;
  }
  return j.dump(2);
}

}  // namespace audience
