#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "audience/errors.hpp"
#include "audience/events.hpp"
#include "audience/rng.hpp"

using namespace audience;

namespace {

RawEvent row(const std::string& user, const std::string& cat, double t,
             bool promo = false) {
  RawEvent r;
  r.user_id = user;
  r.category_id = cat;
  r.timestamp_days = t;
  r.promo = promo;
  return r;
}

}  // namespace

TEST_SUITE("events") {

TEST_CASE("format_double round-trips exactly") {
  const double cases[] = {0.0,     -0.0,   0.1,       1.0 / 3.0, 12345.6789,
                          1e300,   1e-300, -2.5e-17,  1.0,       180.0,
                          0.015625};
  for (double v : cases) {
    double back = 0.0;
    CAPTURE(v);
    REQUIRE(parse_double(format_double(v), &back));
    CHECK(back == v);
  }
  Rng rng(99);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::ldexp(rng.uniform(-1.0, 1.0), i % 600 - 300);
    double back = 0.0;
    REQUIRE(parse_double(format_double(v), &back));
    CHECK(back == v);
  }
}

TEST_CASE("parse_double rejects partial and empty input") {
  double out = 0.0;
  CHECK_FALSE(parse_double("", &out));
  CHECK_FALSE(parse_double("1.5x", &out));
  CHECK_FALSE(parse_double("x1.5", &out));
  CHECK_FALSE(parse_double(" 1.5", &out));
  CHECK(parse_double("-3.75e2", &out));
  CHECK(out == -375.0);
}

TEST_CASE("csv ingestion parses fields, quotes, and promo spellings") {
  std::istringstream in(
      "user_id,item_id,category_id,timestamp_days,price,promo_flag\n"
      "u1,i1,beer,1.5,9.99,1\n"
      "u1,,coffee,0.25,,true\n"
      "u2,\"it,em\",\"say \"\"hi\"\"\",3.0,1.5,false\n"
      "u2,i2,beer,2.0,,\n");
  BehavioralLog log = ingest_events(in, EventFormat::kCsv);
  REQUIRE(log.user_count() == 2);
  REQUIRE(log.category_count() == 3);
  const int u1 = log.find_user("u1");
  REQUIRE(u1 >= 0);
  // per-user sequences come out sorted by time
  REQUIRE(log.events[u1].size() == 2);
  CHECK(log.events[u1][0].t == 0.25);
  CHECK(log.events[u1][0].promo);
  CHECK(log.events[u1][1].promo);
  CHECK(log.events[u1][1].price == 9.99);
  const int u2 = log.find_user("u2");
  REQUIRE(log.events[u2].size() == 2);
  CHECK_FALSE(log.events[u2][0].promo);
  CHECK_FALSE(log.events[u2][1].promo);
  CHECK(log.events[u2][1].item_id == "it,em");
  CHECK(log.categories.find("say \"hi\"") >= 0);
}

TEST_CASE("bad rows abort in strict mode and are counted in lenient mode") {
  const std::string text =
      "user_id,item_id,category_id,timestamp_days,price,promo_flag\n"
      "u1,,beer,1.0,,0\n"
      "u2,,beer,not_a_time,,0\n"
      "u3,,beer,2.0,,maybe\n";
  {
    std::istringstream in(text);
    IngestOptions strict;
    strict.strict = true;
    CHECK_THROWS_AS(ingest_events(in, EventFormat::kCsv, strict), DataError);
  }
  {
    std::istringstream in(text);
    IngestReport report;
    BehavioralLog log = ingest_events(in, EventFormat::kCsv, {}, &report);
    CHECK(report.rows_read == 3);
    CHECK(report.rows_skipped == 2);
    CHECK(log.event_count() == 1);
  }
}

TEST_CASE("wrong csv header is rejected outright") {
  std::istringstream in("user,cat,t\nu1,beer,1\n");
  CHECK_THROWS_AS(ingest_events(in, EventFormat::kCsv), DataError);
}

TEST_CASE("jsonl ingestion with iso timestamps against an epoch") {
  std::istringstream in(
      "{\"user_id\":\"u1\",\"category_id\":\"beer\",\"timestamp_days\":\"2024-01-11 12:00:00\"}\n"
      "{\"user_id\":\"u1\",\"category_id\":\"beer\",\"timestamp_days\":4}\n");
  IngestOptions options;
  options.epoch_date = "2024-01-01";
  BehavioralLog log = ingest_events(in, EventFormat::kJsonl, options);
  REQUIRE(log.event_count() == 2);
  CHECK(log.events[0][0].t == 4.0);
  CHECK(log.events[0][1].t == 10.5);
}

TEST_CASE("negative timestamps are data errors") {
  CHECK_THROWS_AS(make_log({row("u1", "beer", -0.5)}), DataError);
}

TEST_CASE("window defaults to the next whole day and overrides must cover") {
  BehavioralLog log = make_log({row("u1", "beer", 3.2)});
  CHECK(log.window_days == 4.0);
  // integer max timestamp still needs to be strictly inside
  CHECK(make_log({row("u1", "beer", 4.0)}).window_days == 5.0);
  CHECK(make_log({}).window_days == 0.0);
  CHECK(make_log({row("u1", "beer", 3.2)}, 10.0).window_days == 10.0);
  CHECK_THROWS_AS(make_log({row("u1", "beer", 3.2)}, 3.2), DataError);
  CHECK_THROWS_AS(make_log({row("u1", "beer", 3.2)}, 3.0), DataError);
}

TEST_CASE("csv write then ingest reproduces the log exactly") {
  std::vector<RawEvent> rows;
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    RawEvent r = row("u" + std::to_string(i % 13), "c" + std::to_string(i % 5),
                     rng.uniform(0.0, 89.0), rng.bernoulli(0.3));
    if (rng.bernoulli(0.5)) r.price = rng.uniform(0.5, 99.0);
    if (rng.bernoulli(0.5)) r.item_id = "item-" + std::to_string(i);
    rows.push_back(r);
  }
  BehavioralLog log = make_log(rows, 90.0);
  std::ostringstream out;
  write_events_csv(log, out);

  std::istringstream in(out.str());
  IngestOptions options;
  options.window_days = 90.0;
  // csv carries no vocabulary section, so reuse the original index
  options.fixed_categories = &log.categories;
  BehavioralLog back = ingest_events(in, EventFormat::kCsv, options);
  REQUIRE(back.user_ids == log.user_ids);
  REQUIRE(back.categories.ids() == log.categories.ids());
  REQUIRE(back.window_days == log.window_days);
  for (int u = 0; u < log.user_count(); ++u) {
    REQUIRE(back.events[u].size() == log.events[u].size());
    for (std::size_t i = 0; i < log.events[u].size(); ++i) {
      const Event& a = log.events[u][i];
      const Event& b = back.events[u][i];
      CHECK(a.t == b.t);  // exact, not approximate
      CHECK(a.category == b.category);
      CHECK(a.promo == b.promo);
      CHECK(a.item_id == b.item_id);
      CHECK(a.price == b.price);
    }
  }
}

TEST_CASE("count cells cover half-open day ranges ending at the window") {
  BehavioralLog log = make_log({row("u1", "beer", 0.2), row("u1", "beer", 0.5),
                                row("u1", "beer", 1.7), row("u1", "beer", 3.9),
                                row("u1", "beer", 1.0)},
                               4.0);
  CountMatrix m = count_matrix(log, 0, 1.0, 4);
  CHECK(m.window_end == 4.0);
  const auto dense = m.dense_row(0);
  // cell boundaries are half-open: t = 1.0 lands in [1, 2)
  CHECK(dense == std::vector<std::int64_t>{2, 2, 0, 1});
  CHECK(m.row_sum(0) == 5);
}

TEST_CASE("counts outside the grid window are dropped") {
  BehavioralLog log = make_log({row("u1", "beer", 0.5), row("u1", "beer", 6.5),
                                row("u1", "beer", 9.5)},
                               10.0);
  // grid covers [6, 10): the early purchase ages out
  CountMatrix m = count_matrix(log, 0, 2.0, 2, 10.0);
  CHECK(m.dense_row(0) == std::vector<std::int64_t>{1, 1});
  // an event exactly at the window end is excluded, at the start included
  BehavioralLog edge = make_log({row("u1", "beer", 6.0), row("u1", "beer", 10.0)},
                                11.0);
  CountMatrix me = count_matrix(edge, 0, 2.0, 2, 10.0);
  CHECK(me.dense_row(0) == std::vector<std::int64_t>{1, 0});
}

TEST_CASE("default grid must span the whole observation window") {
  BehavioralLog log = make_log({row("u1", "beer", 8.5)}, 9.0);
  CHECK_THROWS_AS(count_matrix(log, 0, 1.0, 4), ValidationError);
  CHECK_NOTHROW(count_matrix(log, 0, 1.0, 9));
  // an explicit window end lifts the requirement
  CHECK_NOTHROW(count_matrix(log, 0, 1.0, 4, 9.0));
}

TEST_CASE("csr rows are consistent with per-user sums") {
  Rng rng(11);
  std::vector<RawEvent> rows;
  for (int i = 0; i < 500; ++i) {
    rows.push_back(row("u" + std::to_string(static_cast<int>(rng.below(40))),
                       "c", rng.uniform(0.0, 29.9)));
  }
  BehavioralLog log = make_log(rows, 30.0);
  CountMatrix m = count_matrix(log, 0, 1.0, 30);
  REQUIRE(m.row_offsets.size() == static_cast<std::size_t>(log.user_count()) + 1);
  std::int64_t total = 0;
  for (int u = 0; u < log.user_count(); ++u) {
    REQUIRE(m.row_begin(u) <= m.row_end(u));
    std::int64_t dense_total = 0;
    for (std::int64_t v : m.dense_row(u)) dense_total += v;
    CHECK(dense_total == m.row_sum(u));
    CHECK(dense_total == static_cast<std::int64_t>(log.events[u].size()));
    total += dense_total;
  }
  CHECK(total == static_cast<std::int64_t>(log.event_count()));
}

TEST_CASE("counts_upto is strict at the cut") {
  BehavioralLog log = make_log({row("u1", "beer", 1.0), row("u1", "beer", 2.0)},
                               5.0);
  CHECK(counts_upto(log, 0, 0, 2.0) == 1);
  CHECK(counts_upto(log, 0, 0, 2.0 + 1e-12) == 2);
  CHECK(counts_upto(log, "nobody", 0, 4.0) == 0);
}

TEST_CASE("stats split users into regular and occasional by month coverage") {
  std::vector<RawEvent> rows;
  // one purchase in each of six 30-day buckets: regular at threshold 5
  for (int b = 0; b < 6; ++b) rows.push_back(row("reg", "beer", 30.0 * b + 1.0));
  rows.push_back(row("occ", "beer", 10.0));
  rows.push_back(row("occ", "coffee", 11.0));
  BehavioralLog log = make_log(rows, 181.0);
  StatsReport stats = log_stats(log);
  CHECK(stats.users == 2);
  CHECK(stats.purchases == 8);
  CHECK(stats.regular_users == 1);
  CHECK(stats.occasional_users == 1);
  CHECK(stats.regular_purchase_share == doctest::Approx(6.0 / 8.0));
  CHECK(stats.purchases_per_user_hist.at(6) == 1);
  CHECK(stats.purchases_per_user_hist.at(2) == 1);
  CHECK(stats.unique_categories_per_user_hist.at(1) == 1);
  CHECK(stats.unique_categories_per_user_hist.at(2) == 1);

  // histogram masses add back up to the user count
  std::int64_t hist_users = 0;
  for (const auto& [k, v] : stats.purchases_per_user_hist) hist_users += v;
  CHECK(hist_users == static_cast<std::int64_t>(stats.users));
  std::int64_t cat_total = 0;
  for (std::int64_t v : stats.purchases_per_category) cat_total += v;
  CHECK(cat_total == static_cast<std::int64_t>(stats.purchases));
}

TEST_CASE("head categories are split by a purchase-count threshold") {
  std::vector<RawEvent> rows;
  for (int i = 0; i < 12; ++i) rows.push_back(row("u" + std::to_string(i), "big", i + 0.5));
  rows.push_back(row("u0", "small", 3.25));
  BehavioralLog log = make_log(rows, 20.0);
  StatsOptions options;
  options.head_threshold_purchases = 10;
  StatsReport stats = log_stats(log, options);
  CHECK(stats.head_categories == 1);
  CHECK(stats.tail_categories == 1);
  CHECK(stats.head_purchase_share == doctest::Approx(12.0 / 13.0));
  CHECK(stats.tail_purchase_share == doctest::Approx(1.0 / 13.0));
}

TEST_CASE("stats json is parseable and keyed stably") {
  BehavioralLog log = make_log({row("u1", "beer", 1.0)}, 2.0);
  const std::string text = stats_to_json(log_stats(log), log);
  CHECK(text.find("\"users\"") != std::string::npos);
  CHECK(text.find("\"purchases\"") != std::string::npos);
  CHECK(text.find("\"purchases_per_category\"") != std::string::npos);
}

}  // TEST_SUITE
