#pragma once

#include <algorithm>
#include <charconv>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "regbench/baselines.hpp"
#include "regbench/engine.hpp"
#include "regbench/metrics.hpp"

namespace regbench {

enum class Metric { Rmse, Acc, Crps, Spread, Ssr };

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::Rmse: return "rmse";
    case Metric::Acc: return "acc";
    case Metric::Crps: return "crps";
    case Metric::Spread: return "spread";
    case Metric::Ssr: return "ssr";
  }
  return "?";
}

inline Metric parse_metric(const std::string& s) {
  for (Metric m : {Metric::Rmse, Metric::Acc, Metric::Crps, Metric::Spread, Metric::Ssr}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown metric '" + s + "'");
}

enum class MaskPolicy { Full, Interior };

inline std::string to_string(MaskPolicy p) { return p == MaskPolicy::Full ? "full" : "interior"; }

inline MaskPolicy parse_mask_policy(const std::string& s) {
  if (s == "full") return MaskPolicy::Full;
  if (s == "interior") return MaskPolicy::Interior;
  throw Error(ErrorKind::InvalidConfig, "unknown mask policy '" + s + "'");
}

/// Shortest text that parses back to the same double.
inline std::string format_real(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

struct LeadForecast {
  std::size_t lead = 0;
  /// One member for deterministic forecasts.
  std::vector<FieldFrame> members;
};

struct ForecastCase {
  Timestamp init;
  std::vector<LeadForecast> leads;
};

/// Leads 0..K of one deterministic trajectory; lead 0 is the initial state.
inline ForecastCase to_case(const Trajectory& t) {
  ForecastCase c{t.init, {}};
  for (std::size_t k = 0; k <= t.leads(); ++k) c.leads.push_back({k, {t.at_lead(k)}});
  return c;
}

/// Leads 0..K of an ensemble of trajectories sharing one init time.
inline ForecastCase to_case(const std::vector<Trajectory>& members) {
  if (members.empty()) throw Error(ErrorKind::InsufficientMembers, "no ensemble members");
  ForecastCase c{members.front().init, {}};
  for (std::size_t k = 0; k <= members.front().leads(); ++k) {
    LeadForecast lf{k, {}};
    for (const auto& m : members) {
      if (m.init != c.init || m.leads() != members.front().leads()) {
        throw Error(ErrorKind::ShapeError, "ensemble trajectories differ in init time or length");
      }
      lf.members.push_back(m.at_lead(k));
    }
    c.leads.push_back(std::move(lf));
  }
  return c;
}

struct EvaluateOptions {
  std::vector<Metric> metrics{Metric::Rmse, Metric::Acc};
  MaskPolicy mask = MaskPolicy::Full;
  std::size_t halo_width = kDefaultHaloWidth;
  /// Channels to report; empty means all.
  std::vector<std::string> variables;
  /// Required for ACC.
  std::shared_ptr<const ClimatologyTable> climatology;
  bool fair_crps = false;
  std::size_t workers = 1;
  std::string run_id;
  ConditioningMode mode = ConditioningMode::BoundaryForcing;
};

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

class LeadTimeReport {
 public:
  struct Row {
    std::string variable;
    std::size_t lead_hours = 0;
    std::string metric;
    double value = 0.0;
    std::size_t count = 0;
  };

  std::vector<Row> rows;
  json metadata = json::object();

  std::optional<Row> find(const std::string& variable, std::size_t lead_hours, const std::string& metric) const {
    for (const auto& r : rows) {
      if (r.variable == variable && r.lead_hours == lead_hours && r.metric == metric) return r;
    }
    return std::nullopt;
  }

  std::string to_csv() const {
    std::string out = "variable,lead_hours,metric,value,count\n";
    for (const auto& r : rows) {
      out += r.variable + "," + std::to_string(r.lead_hours) + "," + r.metric + "," + format_real(r.value) + "," +
             std::to_string(r.count) + "\n";
    }
    return out;
  }

  json to_json() const {
    json list = json::array();
    for (const auto& r : rows) {
      list.push_back({{"variable", r.variable}, {"lead_hours", r.lead_hours}, {"metric", r.metric}, {"value", r.value},
                      {"count", r.count}});
    }
    return json{{"metadata", metadata}, {"rows", std::move(list)}};
  }
};

namespace detail {

struct Scored {
  /// values[metric][variable]; nullopt where the sample is degenerate.
  std::vector<std::vector<std::optional<double>>> values;
};

inline FieldFrame masked(const FieldFrame& f, MaskPolicy mask, std::size_t halo) {
  if (mask == MaskPolicy::Full) return f;
  const auto [rows, cols] = interior_ranges(f.shape().rows, f.shape().cols, halo);
  return subgrid_view(f, rows, cols);
}

inline Scored score_lead(const LeadForecast& lf, const FrameSource& truth, const EvaluateOptions& opt,
                         const std::vector<std::string>& variables) {
  const FieldFrame& first = lf.members.at(0);
  const Timestamp valid = first.time();
  auto prep = [&](const FieldFrame& f) {
    const FieldFrame g = masked(f, opt.mask, opt.halo_width);
    return subgrid_view(g, {0, g.shape().rows}, {0, g.shape().cols}, variables);
  };
  const FieldFrame y = prep(truth.get(valid));
  std::vector<Tensor3> members;
  for (const auto& m : lf.members) {
    if (m.time() != valid) throw Error(ErrorKind::ShapeError, "ensemble members differ in valid time");
    require_compatible(m, first, ErrorKind::ShapeError, "ensemble");
    members.push_back(prep(m).values());
  }
  const auto weights = latitude_weights(*y.geometry());
  const auto some = [](std::vector<double> v) {
    return std::vector<std::optional<double>>(v.begin(), v.end());
  };

  Scored out;
  for (Metric metric : opt.metrics) {
    switch (metric) {
      case Metric::Rmse:
        out.values.push_back(some(rmse(members.size() == 1 ? members[0] : ensemble_mean(members), y.values(), weights)));
        break;
      case Metric::Acc: {
        const FieldFrame c = prep(climatology_forecast(*opt.climatology, valid));
        out.values.push_back(
            acc_per_channel(members.size() == 1 ? members[0] : ensemble_mean(members), y.values(), c.values(), weights));
        break;
      }
      case Metric::Crps: out.values.push_back(some(crps(members, y.values(), weights, opt.fair_crps))); break;
      case Metric::Spread: out.values.push_back(some(spread(members, weights))); break;
      case Metric::Ssr: out.values.push_back(ssr_per_channel(members, y.values(), weights)); break;
    }
  }
  return out;
}

}  // namespace detail

/// Scores of every lead of one initialization.
struct CaseScores {
  Timestamp init;
  std::vector<std::size_t> leads;
  std::vector<detail::Scored> per_lead;
};

/// Rejects option combinations that cannot be scored.
inline void check_options(const EvaluateOptions& opt, std::size_t members) {
  if (opt.metrics.empty()) throw Error(ErrorKind::InvalidConfig, "no metrics requested");
  const auto wants = [&](Metric m) { return std::find(opt.metrics.begin(), opt.metrics.end(), m) != opt.metrics.end(); };
  if (wants(Metric::Acc) && !opt.climatology) throw Error(ErrorKind::InvalidConfig, "acc needs a climatology");
  for (Metric m : {Metric::Spread, Metric::Ssr}) {
    if (wants(m) && members < 2) {
      throw Error(ErrorKind::InsufficientMembers, to_string(m) + " needs ensembles of at least two members");
    }
  }
}

inline std::vector<std::string> report_variables(const VariableCatalog& catalog, const EvaluateOptions& opt) {
  const auto variables = opt.variables.empty() ? channel_names(catalog) : opt.variables;
  for (const auto& v : variables) catalog.index_of(v);
  return variables;
}

inline CaseScores score_case(const ForecastCase& c, const FrameSource& truth, const EvaluateOptions& opt,
                             const std::vector<std::string>& variables) {
  CaseScores out{c.init, {}, {}};
  for (const auto& lf : c.leads) {
    out.leads.push_back(lf.lead);
    out.per_lead.push_back(detail::score_lead(lf, truth, opt, variables));
  }
  return out;
}

/// Mean over init times, per variable, lead and metric. The reduction runs
/// in init-time order, so the result depends neither on the order of
/// `scores` nor on how they were computed.
inline LeadTimeReport aggregate(std::vector<CaseScores> scores, const EvaluateOptions& opt,
                                const std::vector<std::string>& variables) {
  if (scores.empty()) throw Error(ErrorKind::EmptySplit, "nothing to evaluate");
  std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.init < b.init; });
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k].init == scores[k - 1].init) throw Error(ErrorKind::DuplicateTimestamp, format_iso(scores[k].init));
  }
  std::size_t max_lead = 0;
  for (const auto& s : scores) {
    for (std::size_t lead : s.leads) max_lead = std::max(max_lead, lead);
  }

  // sums[lead][metric][variable]
  const std::size_t nm = opt.metrics.size(), nv = variables.size();
  std::vector<std::vector<std::vector<double>>> sums(max_lead + 1, std::vector(nm, std::vector<double>(nv, 0.0)));
  std::vector<std::vector<std::vector<std::size_t>>> counts(max_lead + 1, std::vector(nm, std::vector<std::size_t>(nv, 0)));
  std::map<std::string, std::size_t> skipped;
  for (const auto& s : scores) {
    for (std::size_t l = 0; l < s.leads.size(); ++l) {
      const std::size_t lead = s.leads[l];
      for (std::size_t m = 0; m < nm; ++m) {
        for (std::size_t v = 0; v < nv; ++v) {
          if (const auto& x = s.per_lead[l].values[m][v]) {
            sums[lead][m][v] += *x;
            ++counts[lead][m][v];
          } else {
            ++skipped[to_string(opt.metrics[m])];
          }
        }
      }
    }
  }

  LeadTimeReport report;
  for (std::size_t v = 0; v < nv; ++v) {
    for (std::size_t lead = 0; lead <= max_lead; ++lead) {
      for (std::size_t m = 0; m < nm; ++m) {
        const std::size_t n = counts[lead][m][v];
        if (n == 0) continue;
        report.rows.push_back({variables[v], lead * std::size_t(kStepHours), to_string(opt.metrics[m]),
                               sums[lead][m][v] / double(n), n});
      }
    }
  }

  json metrics = json::array();
  for (Metric m : opt.metrics) metrics.push_back(to_string(m));
  report.metadata = {
      {"run_id", opt.run_id},
      {"conditioning_mode", to_string(opt.mode)},
      {"mask_policy", to_string(opt.mask)},
      {"halo_width", opt.halo_width},
      {"aggregation", "mean_of_per_init_metrics"},
      {"spread_variance", "unbiased"},
      {"crps_estimator", opt.fair_crps ? "fair" : "kernel"},
      {"latitude_weighting", "cos_lat_mean_one"},
      {"metrics", metrics},
      {"init_times", scores.size()},
      {"degenerate_samples_skipped", skipped},
      {"climatology_source", opt.climatology ? json(opt.climatology->source_split()) : json(nullptr)},
  };
  return report;
}

/// Per variable and lead: the mean over init times of the per-init metric.
/// Scoring runs in parallel over (init, lead) pairs.
inline LeadTimeReport evaluate_run(const std::vector<ForecastCase>& cases, const FrameSource& truth,
                                   const EvaluateOptions& opt) {
  if (cases.empty()) throw Error(ErrorKind::EmptySplit, "nothing to evaluate");
  std::size_t fewest = std::numeric_limits<std::size_t>::max();
  for (const auto& c : cases) {
    for (const auto& lf : c.leads) fewest = std::min(fewest, lf.members.size());
  }
  check_options(opt, fewest);
  const auto variables = report_variables(*cases.front().leads.at(0).members.at(0).catalog(), opt);

  struct Task {
    std::size_t c, l;
  };
  std::vector<Task> tasks;
  std::vector<CaseScores> scores;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    scores.push_back({cases[c].init, {}, std::vector<detail::Scored>(cases[c].leads.size())});
    for (std::size_t l = 0; l < cases[c].leads.size(); ++l) {
      tasks.push_back({c, l});
      scores.back().leads.push_back(cases[c].leads[l].lead);
    }
  }
  parallel_for(tasks.size(), opt.workers, [&](std::size_t t) {
    const auto [c, l] = tasks[t];
    scores[c].per_lead[l] = detail::score_lead(cases[c].leads[l], truth, opt, variables);
  });
  return aggregate(std::move(scores), opt, variables);
}

// ---------------------------------------------------------------------------
// Event series
// ---------------------------------------------------------------------------

struct EventSeries {
  RegionBox box;
  std::vector<std::string> variables;
  std::vector<Timestamp> times;
  /// forecast[v][d] and reference[v][d]
  std::vector<std::vector<double>> forecast;
  std::vector<std::vector<double>> reference;

  std::string to_csv() const {
    std::string out = "time,variable,forecast,reference\n";
    for (std::size_t d = 0; d < times.size(); ++d) {
      for (std::size_t v = 0; v < variables.size(); ++v) {
        out += format_iso(times[d]) + "," + variables[v] + "," + format_real(forecast[v][d]) + "," +
               format_real(reference[v][d]) + "\n";
      }
    }
    return out;
  }
};

/// One box mean per day from `start` to `end` (dates inclusive) at `hour`,
/// for a stored trajectory and for truth.
inline EventSeries event_series(const Trajectory& trajectory, const FrameSource& truth, const RegionBox& box,
                                Timestamp start, Timestamp end, int hour, const std::vector<std::string>& variables = {}) {
  if (hour < 0 || hour > 23 || hour % kStepHours != 0) {
    throw Error(ErrorKind::InvalidConfig, "event hour must be a multiple of 6 in [0, 23]");
  }
  const auto day0 = std::chrono::floor<std::chrono::days>(start), day1 = std::chrono::floor<std::chrono::days>(end);
  if (day1 < day0) throw Error(ErrorKind::InvalidConfig, "event window ends before it starts");

  const auto& catalog = *trajectory.initial.catalog();
  EventSeries s{box, variables.empty() ? channel_names(catalog) : variables, {}, {}, {}};
  std::vector<std::size_t> idx;
  for (const auto& v : s.variables) idx.push_back(catalog.index_of(v));
  s.forecast.assign(idx.size(), {});
  s.reference.assign(idx.size(), {});

  for (auto day = day0; day <= day1; day += std::chrono::days{1}) {
    const Timestamp t = Timestamp(day) + std::chrono::hours{hour};
    if (t < trajectory.init || t > trajectory.init + kStep * long(trajectory.leads())) {
      throw Error(ErrorKind::MissingFrame, "trajectory from " + format_iso(trajectory.init) + " does not reach " +
                                               format_iso(t));
    }
    const auto lead = std::size_t((t - trajectory.init) / kStep);
    const auto f = region_box_mean(trajectory.at_lead(lead), box);
    const auto r = region_box_mean(truth.get(t), box);
    s.times.push_back(t);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      s.forecast[k].push_back(f[idx[k]]);
      s.reference[k].push_back(r[idx[k]]);
    }
  }
  return s;
}

}  // namespace regbench
