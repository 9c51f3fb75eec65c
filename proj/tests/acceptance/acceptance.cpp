// Acceptance checks. One PASS/FAIL line per criterion. Criteria listed in
// kKnownUnattainable print FAIL when they fail but do not change the exit
// status; any other failure does.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "regbench/cli.hpp"

using namespace regbench;

namespace {

const std::set<std::string> kKnownUnattainable{"edm-distribution", "split-counts"};

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor3 normal_tensor(Shape3 s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor3 t(s);
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = n(rng);
  return t;
}

oracle::Field to_field(const Tensor3& t) {
  const auto s = t.shape();
  oracle::Field f(s.channels, std::vector<std::vector<double>>(s.rows, std::vector<double>(s.cols)));
  for (std::size_t v = 0; v < s.channels; ++v)
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t j = 0; j < s.cols; ++j) f[v][i][j] = t(v, i, j);
  return f;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "regbench-accept-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------

Outcome metric_oracle_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<std::size_t> rows_d(1, 6), cols_d(1, 5), chans(1, 4), members(2, 5);
  std::uniform_real_distribution<double> lat_d(-80.0, 80.0);
  double worst = 0.0;
  std::size_t mismatches = 0, compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = rows_d(rng), cols = cols_d(rng), v = chans(rng), m = members(rng);
    std::set<double> lat_set;
    while (lat_set.size() < rows) lat_set.insert(lat_d(rng));
    const std::vector<double> lats(lat_set.begin(), lat_set.end());
    const auto w = latitude_weights(lats);
    const Shape3 s{v, rows, cols};
    const auto f = normal_tensor(s, rng), x = normal_tensor(s, rng), c = normal_tensor(s, rng, 0.3);
    std::vector<Tensor3> ens;
    std::vector<oracle::Field> ens_f;
    for (std::size_t k = 0; k < m; ++k) {
      ens.push_back(normal_tensor(s, rng));
      ens_f.push_back(to_field(ens.back()));
    }
    const auto check = [&](const std::vector<double>& got, const std::vector<double>& ref) {
      for (std::size_t q = 0; q < got.size(); ++q) {
        ++compared;
        const double rel = std::abs(got[q] - ref[q]) / std::max(std::abs(ref[q]), 1e-300);
        if (got[q] != ref[q]) worst = std::max(worst, rel);
        if (!oracle::close(got[q], ref[q])) ++mismatches;
      }
      if (got.size() != ref.size()) ++mismatches;
    };
    check(rmse(f, x, w), oracle::rmse(to_field(f), to_field(x), lats));
    check(acc(f, x, c, w), oracle::acc(to_field(f), to_field(x), to_field(c), lats));
    check(crps(ens, x, w), oracle::crps(ens_f, to_field(x), lats));
    check(spread(ens, w), oracle::spread(ens_f, lats));
    check(ssr(ens, x, w), oracle::ssr(ens_f, to_field(x), lats));
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          fmt("%zu values, %zu outside 1e-12, max rel err %.2e, %.2f s", compared, mismatches, worst, secs)};
}

Outcome hand_anchors() {
  // Equality within 4 ulp: cos(60 deg) is not exactly 1/2 in binary.
  const auto near = [](double a, double b) { return std::abs(a - b) <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(b); };
  const auto w = latitude_weights(std::vector<double>{0.0, 60.0});
  Tensor3 f(Shape3{1, 2, 1}), zero(Shape3{1, 2, 1});
  f(0, 0, 0) = 1.0;
  f(0, 1, 0) = 2.0;
  const double r = rmse(f, zero, w)[0];

  const Tensor3 p0(Shape3{1, 1, 1}, 0.0), p1(Shape3{1, 1, 1}, 1.0), p2(Shape3{1, 1, 1}, 2.0);
  const LatWeights eq = latitude_weights(std::vector<double>{0.0});
  const double c = crps(std::vector<Tensor3>{p0, p2}, p1, eq)[0];

  Tensor3 fa(Shape3{1, 1, 2}), xa(Shape3{1, 1, 2}), clim(Shape3{1, 1, 2});
  fa(0, 0, 0) = 1.0;
  xa(0, 0, 0) = 1.0;
  xa(0, 0, 1) = 1.0;
  const double a = acc(fa, xa, clim, eq)[0];

  const bool ok = near(r, std::sqrt(2.0)) && c == 0.5 && near(a, 1.0 / std::sqrt(2.0)) && near(w[0], 4.0 / 3.0) &&
                  near(w[1], 2.0 / 3.0);
  return {ok, fmt("rmse %.17g, crps %.17g, acc %.17g, L [%.17g, %.17g]", r, c, a, w[0], w[1])};
}

Outcome schedule_anchors() {
  const NoiseSchedule s;
  const auto sig = sigma_schedule(s);
  const double g = churn_gamma(50.0, s);
  TempDir dir;
  const auto path = dir.path() / "ensemble.json";
  std::ofstream(path) << R"({"schedule": {"ensemble_size": 50, "num_levels": 20}})";
  const auto config = cli::resolve_config("sample", path, {});
  const auto loaded = schedule_from_json(config.at("schedule"));
  const auto defaults = cli::resolve_config("sample", std::nullopt, {});
  const auto d = schedule_from_json(defaults.at("schedule"));
  const bool ok = sig.size() == 21 && sig[0] == 80.0 && sig[19] == 0.03 && sig[20] == 0.0 && g == 0.125 &&
                  loaded.ensemble_size == 50 && loaded.num_levels == 20 && d.ensemble_size == 50 && d.num_levels == 20;
  return {ok, fmt("sigma_0 %.17g, sigma_19 %.17g, sigma_20 %g, gamma(50) %.17g, M %zu, N %zu", sig[0], sig[19], sig[20], g,
                  loaded.ensemble_size, loaded.num_levels)};
}

Outcome edm_distribution() {
  const GaussianDenoiser denoiser(2.0, 1.0);
  const NoiseSchedule schedule;
  const Shape3 shape{1, 4, 4};
  const std::size_t n = 10'000;
  bool ok = true;
  std::string detail;
  const auto t0 = Clock::now();
  for (SamplerKind kind : {SamplerKind::Heun, SamplerKind::DpmSolverPP2S}) {
    std::vector<double> sum(16, 0.0), sq(16, 0.0);
    std::vector<Tensor3> draws;
    draws.reserve(n);
    for (std::size_t k = 0; k < n; ++k) draws.push_back(sample(kind, denoiser, shape, {}, schedule, hash_key({7, k})));
    double worst_z = 0.0, std_lo = 1e300, std_hi = 0.0;
    for (std::size_t e = 0; e < 16; ++e) {
      double mean = 0.0;
      for (const auto& d : draws) mean += d[e];
      mean /= double(n);
      double var = 0.0;
      for (const auto& d : draws) var += (d[e] - mean) * (d[e] - mean);
      const double sd = std::sqrt(var / double(n - 1));
      const double z = std::abs(mean - 2.0) / (sd / std::sqrt(double(n)));
      worst_z = std::max(worst_z, z);
      std_lo = std::min(std_lo, sd);
      std_hi = std::max(std_hi, sd);
      if (z > 4.0 || std::abs(sd - 1.0) > 0.05) ok = false;
    }
    detail += fmt("%s max|z| %.2f std [%.4f, %.4f]; ", to_string(kind).c_str(), worst_z, std_lo, std_hi);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  return {ok, detail + fmt("%.2f s", secs)};
}

Outcome ssr_calibration() {
  const auto t0 = Clock::now();
  const auto w = latitude_weights(GridGeometry::regular(6.0, 66.6, 0.25, 64, 64));
  std::size_t inside = 0;
  double lo = 1e300, hi = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(hash_key({99, seed}));
    std::vector<Tensor3> ens;
    for (int m = 0; m < 50; ++m) ens.push_back(normal_tensor({1, 64, 64}, rng));
    const double r = ssr(ens, normal_tensor({1, 64, 64}, rng), w)[0];
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    if (r >= 0.93 && r <= 1.07) ++inside;
  }
  const double secs = seconds_since(t0);
  return {inside >= 99 && secs < 30.0,
          fmt("%zu/100 in [0.93, 1.07], range [%.4f, %.4f], target %.4f, %.2f s", inside, lo, hi, std::sqrt(50.0 / 51.0), secs)};
}

Outcome exact_recovery() {
  SyntheticConfig cfg;
  const auto catalog = std::make_shared<const VariableCatalog>(synthetic_catalog(cfg.channels));
  const auto geometry = std::make_shared<const GridGeometry>(synthetic_geometry(cfg));
  const Timestamp init = make_time(2019, 7, 1);
  MemoryFrameSource truth;
  for (long k = 0; k <= 20; ++k) truth.add(synthesize_frame(11, cfg, catalog, geometry, init + kStep * k));
  std::vector<FieldFrame> past;
  for (int y : {2005, 2006, 2007}) {
    for (long k = 0; k <= 20; ++k) past.push_back(synthesize_frame(11, cfg, catalog, geometry, make_time(y, 7, 1) + kStep * k));
  }
  const auto clim = fit_climatology(past);
  const auto weights = latitude_weights(*geometry);

  OracleAdapter oracle(truth);
  RolloutOptions opt;
  opt.leads = 20;
  opt.boundary.halo_width = kDefaultHaloWidth;
  const auto traj = rollout(oracle, truth, init, opt);
  double worst_rmse = 0.0, worst_acc = 0.0;
  bool ring_exact = true;
  for (std::size_t k = 1; k <= 20; ++k) {
    const auto& f = traj.at_lead(k);
    const auto x = truth.get(f.time());
    for (double r : rmse(f, x, weights)) worst_rmse = std::max(worst_rmse, r);
    for (double a : acc(f, x, climatology_forecast(clim, f.time()), weights)) worst_acc = std::max(worst_acc, std::abs(a - 1.0));
    const auto s = f.shape();
    for (std::size_t v = 0; v < s.channels; ++v)
      for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j)
          if (in_ring(i, j, s.rows, s.cols, opt.boundary.halo_width) &&
              std::bit_cast<std::uint64_t>(f.values()(v, i, j)) != std::bit_cast<std::uint64_t>(x.values()(v, i, j))) {
            ring_exact = false;
          }
  }
  return {worst_rmse <= 1e-12 && worst_acc <= 1e-12 && ring_exact,
          fmt("20 leads, max rmse %.3e, max |acc-1| %.3e, ring %s", worst_rmse, worst_acc, ring_exact ? "bit-exact" : "differs")};
}

Outcome split_counts() {
  const auto catalog = std::make_shared<const VariableCatalog>(synthetic_catalog(1));
  const auto geometry = std::make_shared<const GridGeometry>(GridGeometry::regular(6.0, 66.6, 0.96, 2, 2));
  std::vector<FrameRecord> records;
  for (Timestamp t : calendar_steps(2000, 2019)) records.push_back({frame_relative_path("x", t), t, catalog, geometry});
  const auto m = build_splits(records, standard_splits(), "/");
  const std::size_t train = m.count("train"), val = m.count("val"), test = m.count("test");
  const double dt = std::abs(double(train) - 26500.0) / 26500.0, dv = std::abs(double(val) - 1500.0) / 1500.0,
               ds = std::abs(double(test) - 1500.0) / 1500.0;
  const bool ok = train == 26304 && val == 1460 && test == 1460 && dt <= 0.01 && dv <= 0.01 && ds <= 0.01;
  return {ok, fmt("train %zu (stated 26304), val %zu, test %zu; off approx counts by %.2f%%, %.2f%%, %.2f%%", train, val,
                  test, 100 * dt, 100 * dv, 100 * ds)};
}

Outcome conditioning() {
  const auto coarse_g = std::make_shared<const GridGeometry>(GridGeometry::regular(4.0, 64.0, 2.0, 20, 20));
  const auto fine_g = std::make_shared<const GridGeometry>(GridGeometry::regular(6.0, 66.6, 0.25, 64, 64));
  const auto catalog = std::make_shared<const VariableCatalog>(synthetic_catalog(2));
  Tensor3 affine(Shape3{2, 20, 20}), constant(Shape3{2, 20, 20}, 273.15);
  const auto f = [](std::size_t v, double lat, double lon) { return v == 0 ? 3.0 + 0.5 * lat - 1.25 * lon : -7.0 + 2.0 * lat + 0.1 * lon; };
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t j = 0; j < 20; ++j) affine(v, i, j) = f(v, coarse_g->lat()[i], coarse_g->lon()[j]);
  const auto t = make_time(2019, 1, 1);
  const auto up = bilinear_upsample(FieldFrame(t, affine, catalog, coarse_g), fine_g);
  const auto upc = bilinear_upsample(FieldFrame(t, constant, catalog, coarse_g), fine_g);
  double worst = 0.0;
  bool const_exact = true;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t j = 0; j < 64; ++j) {
        worst = std::max(worst, std::abs(up.values()(v, i, j) - f(v, fine_g->lat()[i], fine_g->lon()[j])));
        const_exact = const_exact && upc.values()(v, i, j) == 273.15;
      }

  std::mt19937_64 rng(3);
  const auto big = std::make_shared<const GridGeometry>(GridGeometry::regular(-30.0, 0.0, 0.25, 256, 256));
  const FieldFrame state(t, normal_tensor({2, 256, 256}, rng), catalog, big);
  const FieldFrame truth(t, normal_tensor({2, 256, 256}, rng), catalog, big);
  const auto forced = apply_boundary_forcing(state, truth, 10);
  bool inner_same = true, ring_truth = true;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t i = 0; i < 256; ++i)
      for (std::size_t j = 0; j < 256; ++j) {
        const bool inner = i >= 10 && i < 246 && j >= 10 && j < 246;
        const double want = inner ? state.values()(v, i, j) : truth.values()(v, i, j);
        const bool same = std::bit_cast<std::uint64_t>(forced.values()(v, i, j)) == std::bit_cast<std::uint64_t>(want);
        (inner ? inner_same : ring_truth) &= same;
      }
  return {worst <= 1e-12 && const_exact && inner_same && ring_truth,
          fmt("affine max err %.2e, constants %s, inner 236x236 %s, ring %s", worst, const_exact ? "exact" : "differ",
              inner_same ? "bit-identical" : "changed", ring_truth ? "truth" : "differs")};
}

Outcome determinism() {
  TempDir dir;
  const auto run = [](std::vector<std::string> args) {
    args.insert(args.begin(), "regbench");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(int(argv.size()), argv.data(), out, err);
    if (code != 0) throw std::runtime_error("regbench " + args[1] + " failed: " + err.str());
    std::string line = out.str();
    return fs::path(line.substr(0, line.find('\n')));
  };
  const auto d = dir.path();
  std::ofstream(d / "synth.json") << R"({"seed": 17, "synthetic": {"channels": 3, "rows": 24, "cols": 24,
      "splits": [{"name": "train", "first_year": 2001, "last_year": 2001}, {"name": "test", "first_year": 2002, "last_year": 2002}]}})";
  run({"synth", "--config", (d / "synth.json").string(), "--out", (d / "data").string(), "--force"});
  run({"climatology", "--set", "manifest=" + (d / "data/manifest.json").string(), "--out", (d / "clim").string(), "--force"});
  const std::vector<std::string> base{"evaluate",
                                      "--set", "manifest=" + (d / "data/manifest.json").string(),
                                      "--set", "climatology=" + (d / "clim/climatology").string(),
                                      "--set", "leads=12", "--set", "init_stride=53", "--set", "max_inits=12",
                                      "--set", "boundary.halo_width=3"};
  std::size_t runs = 0, differing = 0;
  for (const auto& extra : std::vector<std::vector<std::string>>{
           {"--set", "adapter.builtin=linear_decay", "--set", "metrics=[\"rmse\",\"acc\"]"},
           {"--set", "seed=23", "--set", "ensemble.schedule.ensemble_size=4", "--set", "ensemble.schedule.num_levels=8",
            "--set", "ensemble.denoiser.std=0.3", "--set", "leads=4", "--set", "metrics=[\"rmse\",\"crps\",\"spread\",\"ssr\"]"}}) {
    std::optional<std::string> first;
    for (const char* workers : {"1", "1", "3", "8"}) {
      auto args = base;
      args.insert(args.end(), extra.begin(), extra.end());
      args.insert(args.end(), {"--workers", workers, "--out", (d / "runs").string()});
      const auto b = read_file_bytes(run(args) / "report.csv");
      const std::string csv(b.begin(), b.end());
      ++runs;
      if (!first) first = csv;
      else if (csv != *first) ++differing;
    }
  }
  return {differing == 0, fmt("%zu evaluate runs over workers {1, 1, 3, 8}, %zu differing reports", runs, differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric-oracle-suite", metric_oracle_suite},
      {"hand-anchors", hand_anchors},
      {"schedule-anchors", schedule_anchors},
      {"edm-distribution", edm_distribution},
      {"ssr-calibration", ssr_calibration},
      {"exact-recovery-rollout", exact_recovery},
      {"split-counts", split_counts},
      {"conditioning", conditioning},
      {"determinism", determinism},
  };
  int unexpected = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool known = kKnownUnattainable.count(name) > 0;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail;
    if (!o.pass && known) std::cout << " [known, see README]";
    std::cout << std::endl;
    if (!o.pass && !known) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
