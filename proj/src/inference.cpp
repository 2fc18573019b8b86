#include "audience/inference.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "audience/parallel.hpp"

namespace audience {

namespace {

using nlohmann::json;

}  // namespace

double quantized_excitation(const std::vector<double>& levels,
                            const std::vector<double>& counts) {
  if (levels.size() != counts.size()) {
    throw ValidationError("kernel levels and counts must have equal length");
  }
  const std::size_t s_cells = levels.size();
  double acc = 0.0;
  for (std::size_t s = 0; s < s_cells; ++s) {
    acc += levels[s_cells - 1 - s] * counts[s];
  }
  return acc;
}

double quantized_excitation(const std::vector<double>& levels,
                            const std::vector<std::int64_t>& counts) {
  if (levels.size() != counts.size()) {
    throw ValidationError("kernel levels and counts must have equal length");
  }
  const std::size_t s_cells = levels.size();
  double acc = 0.0;
  for (std::size_t s = 0; s < s_cells; ++s) {
    acc += levels[s_cells - 1 - s] * static_cast<double>(counts[s]);
  }
  return acc;
}

PrecomputeBank build_precompute(const LatentNetwork& network,
                                const KernelBank& bank, double grain, int cells) {
  if (bank.categories != network.categories) {
    throw ValidationError("kernel bank and network category counts differ");
  }
  const int cats = network.categories;
  const std::size_t expected = static_cast<std::size_t>(cats) * cats;
  if (bank.cells.size() != expected) {
    throw ValidationError("kernel bank is missing pair entries: have " +
                          std::to_string(bank.cells.size()) + ", need " +
                          std::to_string(expected));
  }
  if (!(grain > 0.0) || cells < 1) {
    throw ValidationError("precompute needs positive grain and at least one cell");
  }

  PrecomputeBank pre;
  pre.grain = grain;
  pre.cells = cells;
  pre.categories = cats;
  pre.target.resize(cats);
  pre.source_major.assign(cats,
                          std::vector<double>(static_cast<std::size_t>(cells) * cats));
  for (int c = 0; c < cats; ++c) {
    auto& mat = pre.target[c];
    mat.resize(static_cast<std::size_t>(cats) * cells);
    for (int cp = 0; cp < cats; ++cp) {
      const QuantizedKernel q = quantize_kernel(bank.at(c, cp), grain, cells);
      const double b = network.at(c, cp);
      for (int s = 0; s < cells; ++s) {
        const double level = b * q.levels[s];
        mat[static_cast<std::size_t>(cp) * cells + s] = level;
        // reversed copy: count cell s pairs with kernel age (S-1-s)*g
        pre.source_major[cp][static_cast<std::size_t>(cells - 1 - s) * cats + c] =
            level;
      }
    }
  }
  return pre;
}

namespace {

void check_counts(const PrecomputeBank& pre, const std::vector<CountMatrix>& counts,
                  std::size_t users) {
  if (static_cast<int>(counts.size()) != pre.categories) {
    throw ValidationError("need one count matrix per category");
  }
  for (int cp = 0; cp < pre.categories; ++cp) {
    const CountMatrix& m = counts[cp];
    if (m.category != cp) throw ValidationError("count matrices out of order");
    if (m.cells != pre.cells || m.grain_days != pre.grain) {
      throw ValidationError("count grid does not match the precompute grid");
    }
    if (static_cast<std::size_t>(m.user_count) != users) {
      throw ValidationError("count matrices disagree on the user universe");
    }
    if (m.window_end != counts[0].window_end) {
      throw ValidationError("count matrices disagree on the evaluation tick");
    }
  }
}

}  // namespace

IntensityMatrix infer_intensities(const BaseIntensities& base,
                                  const PrecomputeBank& pre,
                                  const std::vector<CountMatrix>& counts,
                                  const std::vector<std::string>& user_ids,
                                  int threads) {
  const int cats = pre.categories;
  if (static_cast<int>(base.mu0.size()) != cats) {
    throw ValidationError("base intensity vector does not match the category count");
  }
  check_counts(pre, counts, user_ids.size());

  IntensityMatrix out;
  out.categories = cats;
  out.grain = pre.grain;
  out.cells = pre.cells;
  out.tick = counts.empty() ? 0.0 : counts[0].window_end;
  out.user_ids = user_ids;
  out.lambda.assign(user_ids.size() * static_cast<std::size_t>(cats), 0.0);

  parallel_for(user_ids.size(), threads, 256, [&](std::size_t begin, std::size_t end) {
    for (std::size_t u = begin; u < end; ++u) {
      double* lam = &out.lambda[u * cats];
      for (int c = 0; c < cats; ++c) lam[c] = base.mu0[c];
      for (int cp = 0; cp < cats; ++cp) {
        const CountMatrix& m = counts[cp];
        const double* q = pre.source_major[cp].data();
        for (std::int64_t e = m.row_begin(static_cast<int>(u));
             e < m.row_end(static_cast<int>(u)); ++e) {
          const auto& entry = m.entries[e];
          const double n = static_cast<double>(entry.count);
          const double* qrow = q + static_cast<std::size_t>(entry.cell) * cats;
          for (int c = 0; c < cats; ++c) lam[c] += n * qrow[c];
        }
      }
    }
  });
  return out;
}

double intensity_scalar(const BaseIntensities& base, const PrecomputeBank& pre,
                        const std::vector<CountMatrix>& counts, int user,
                        int category) {
  check_counts(pre, counts, counts.empty() ? 0 : counts[0].user_count);
  const int s_cells = pre.cells;
  double acc = base.mu0[category];
  for (int cp = 0; cp < pre.categories; ++cp) {
    const std::vector<std::int64_t> row = counts[cp].dense_row(user);
    const double* levels =
        &pre.target[category][static_cast<std::size_t>(cp) * s_cells];
    for (int s = 0; s < s_cells; ++s) {
      acc += levels[s_cells - 1 - s] * static_cast<double>(row[s]);
    }
  }
  return acc;
}

double cif_continuous(const BehavioralLog& log, int user, int category,
                      const BaseIntensities& base, const LatentNetwork& network,
                      const KernelBank& bank, double t) {
  if (user < 0 || user >= log.user_count()) {
    throw ValidationError("user index out of range");
  }
  if (t > log.window_days) {
    throw ValidationError("evaluation time beyond the observation window");
  }
  double acc = base.mu0[category];
  for (const Event& ev : log.events[user]) {
    if (ev.t >= t) break;  // sorted; the integral runs over [0, t)
    acc += network.at(category, ev.category) *
           eval_kernel(bank.at(category, ev.category), t - ev.t);
  }
  return acc;
}

Audience rank_audience(const IntensityMatrix& lambda, int category,
                       std::int64_t reach) {
  if (category < 0 || category >= lambda.categories) {
    throw ValidationError("category index out of range");
  }
  if (reach < 1) throw ValidationError("reach must be at least 1");

  const std::size_t users = lambda.user_ids.size();
  Audience a;
  a.category = category;
  a.reach = reach;
  if (static_cast<std::size_t>(reach) > users) {
    a.warning = "reach " + std::to_string(reach) + " exceeds the universe of " +
                std::to_string(users) + " users; returning the full ranking";
  }
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(reach), users);

  std::vector<std::uint32_t> order(users);
  std::iota(order.begin(), order.end(), 0);
  const auto better = [&](std::uint32_t x, std::uint32_t y) {
    const double sx = lambda.at(static_cast<int>(x), category);
    const double sy = lambda.at(static_cast<int>(y), category);
    if (sx != sy) return sx > sy;
    return lambda.user_ids[x] < lambda.user_ids[y];
  };
  std::partial_sort(order.begin(), order.begin() + take, order.end(), better);

  a.members.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    a.members.push_back({lambda.user_ids[order[i]],
                         lambda.at(static_cast<int>(order[i]), category)});
  }
  return a;
}

void intensities_to_csv(const IntensityMatrix& lambda,
                        const CategoryIndex& categories, std::ostream& out) {
  out << "user_id,category_id,intensity\n";
  for (std::size_t u = 0; u < lambda.user_ids.size(); ++u) {
    for (int c = 0; c < lambda.categories; ++c) {
      out << lambda.user_ids[u] << ',' << categories.id(c) << ','
          << format_double(lambda.at(static_cast<int>(u), c)) << '\n';
    }
  }
}

void write_intensities(const IntensityMatrix& lambda, std::ostream& out) {
  json header;
  header["categories"] = lambda.categories;
  header["grain"] = lambda.grain;
  header["cells"] = lambda.cells;
  header["tick"] = lambda.tick;
  header["user_ids"] = lambda.user_ids;
  out << header.dump() << '\n';
  // raw host-endian doubles; artifacts are consumed on the machine that
  // produced them
  out.write(reinterpret_cast<const char*>(lambda.lambda.data()),
            static_cast<std::streamsize>(lambda.lambda.size() * sizeof(double)));
}

IntensityMatrix read_intensities(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("missing intensity header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad intensity header: ") + e.what());
  }
  IntensityMatrix m;
  m.categories = header.at("categories").get<int>();
  m.grain = header.at("grain").get<double>();
  m.cells = header.at("cells").get<int>();
  m.tick = header.at("tick").get<double>();
  m.user_ids = header.at("user_ids").get<std::vector<std::string>>();
  m.lambda.resize(m.user_ids.size() * static_cast<std::size_t>(m.categories));
  in.read(reinterpret_cast<char*>(m.lambda.data()),
          static_cast<std::streamsize>(m.lambda.size() * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != m.lambda.size() * sizeof(double)) {
    throw DataError("intensity payload truncated");
  }
  return m;
}

void audience_to_csv(const Audience& audience, std::ostream& out) {
  out << "rank,user_id,score\n";
  for (std::size_t i = 0; i < audience.members.size(); ++i) {
    out << (i + 1) << ',' << audience.members[i].user_id << ','
        << format_double(audience.members[i].score) << '\n';
  }
}

}  // namespace audience
