#pragma once

// The `regbench` command line. Each command reads one JSON run configuration
// (defaults, then --config, then --set overrides), validates it, and only then
// creates an output directory holding the resolved config, VERSION and the
// command's artifacts.
//
// Exit codes: 0 ok, 1 runtime error, 2 configuration error.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "regbench/baselines.hpp"
#include "regbench/edm.hpp"
#include "regbench/evaluate.hpp"
#include "regbench/transport.hpp"

namespace regbench {

inline constexpr const char* kVersion = "1.0.0";

namespace cli {

/// Runs the command's work inside the prepared output directory.
using Action = std::function<void(const fs::path& run_dir)>;

inline json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::InvalidConfig, "config file " + path.string() + " does not exist");
  const auto bytes = read_file_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

/// "a.b.c=value"; the value is parsed as JSON when possible, else taken as a string.
inline void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::InvalidConfig, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorKind::InvalidConfig, "bad override key '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline bool unset(const json& j, const std::string& key) { return !j.contains(key) || j.at(key).is_null(); }

template <typename T>
T get(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, "config key '" + key + "': " + e.what());
  }
}

inline fs::path required_path(const json& j, const std::string& key) {
  if (!j.contains(key) || j.at(key).is_null()) throw Error(ErrorKind::InvalidConfig, "config key '" + key + "' is required");
  fs::path p = get<std::string>(j, key);
  if (!fs::exists(p)) throw Error(ErrorKind::InvalidConfig, key + " " + p.string() + " does not exist");
  return p;
}

inline std::uint64_t required_seed(const json& j) {
  if (!j.contains("seed") || j.at("seed").is_null()) {
    throw Error(ErrorKind::InvalidConfig, "config key 'seed' is required for this command");
  }
  return get<std::uint64_t>(j, "seed");
}

inline DatasetManifest load_manifest_checked(const fs::path& path) {
  auto m = load_manifest(path);
  validate_manifest(m, false);
  return m;
}

inline std::string utc_stamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const auto c = civil(now);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d%02u%02uT%02d%02d%02d", c.year, c.month, c.day, c.hour, c.minute, c.second);
  return buf;
}

/// `out` itself under --force, else a fresh `out/<command>-<UTC stamp>[-n]`.
inline fs::path make_run_dir(const fs::path& out, const std::string& command, bool force) {
  fs::path dir = out;
  if (!force) {
    dir = out / (command + "-" + utc_stamp());
    for (int n = 1; fs::exists(dir); ++n) dir = out / (command + "-" + utc_stamp() + "-" + std::to_string(n));
  }
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Defaults
// ---------------------------------------------------------------------------

inline json adapter_defaults() {
  return {{"builtin", "persistence"}, {"alpha", 0.5}, {"command", nullptr}, {"endpoint", nullptr}, {"timeout_s", 120}};
}

inline json ensemble_defaults() {
  return {{"denoiser", {{"kind", "gaussian"}, {"mean", 0.0}, {"std", 1.0}, {"value", 0.0}, {"endpoint", nullptr}}},
          {"sampler", "heun"},
          {"schedule", schedule_to_json(NoiseSchedule{})}};
}

inline json rollout_defaults() {
  return {{"manifest", nullptr},
          {"split", "test"},
          {"adapter", adapter_defaults()},
          {"climatology", nullptr},
          {"boundary", {{"mode", "boundary_forcing"}, {"halo_width", kDefaultHaloWidth}}},
          {"coarse_manifest", nullptr},
          {"leads", kDefaultLeads},
          {"history", 0},
          {"init_stride", 4},
          {"max_inits", 0},
          {"inits", json::array()}};
}

inline json defaults_for(const std::string& command) {
  json d = {{"command", command}, {"out", "runs"}, {"seed", nullptr}};
  if (command == "synth") {
    d["synthetic"] = synthetic_config_to_json(SyntheticConfig{});
    d["coarse_factor"] = 0;
  } else if (command == "ingest") {
    d.update({{"raw_dir", nullptr},
              {"raw_dtype", "f64"},
              {"catalog", nullptr},
              {"lat", nullptr},
              {"lon", nullptr},
              {"resolution_deg", 0.0},
              {"dtype", "f64"},
              {"splits", splits_to_json(standard_splits())}});
  } else if (command == "stats" || command == "climatology") {
    d.update({{"manifest", nullptr}, {"split", "train"}, {"dtype", "f64"}});
  } else if (command == "rollout") {
    d.update(rollout_defaults());
    d["dtype"] = "f64";
  } else if (command == "evaluate") {
    d.update(rollout_defaults());
    d.update({{"metrics", {"rmse", "acc"}}, {"mask", "full"}, {"variables", json::array()}, {"fair_crps", false},
              {"ensemble", nullptr}});
  } else if (command == "sample") {
    d.update(ensemble_defaults());
    d["shape"] = {1, 4, 4};
  } else if (command == "extreme") {
    d.update(rollout_defaults());
    const auto box = central_india_box();
    d.update({{"init", nullptr},
              {"start", nullptr},
              {"end", nullptr},
              {"hour", 12},
              {"box", {{"lat_min", box.lat_min}, {"lat_max", box.lat_max}, {"lon_min", box.lon_min},
                       {"lon_max", box.lon_max}, {"label", box.label}}},
              {"variables", json::array()}});
  }
  return d;
}

/// Defaults, then the config file (merge patch), then overrides.
inline json resolve_config(const std::string& command, const std::optional<fs::path>& file,
                           const std::vector<std::string>& overrides) {
  json config = defaults_for(command);
  if (file) {
    json user = read_json_file(*file);
    if (!user.is_object()) throw Error(ErrorKind::InvalidConfig, "config must be a JSON object");
    // Ensemble blocks are replaced wholesale; merge into their defaults first.
    if (user.contains("ensemble") && user["ensemble"].is_object()) {
      json e = ensemble_defaults();
      e.merge_patch(user["ensemble"]);
      user["ensemble"] = e;
    }
    config.merge_patch(user);
  }
  for (const auto& o : overrides) {
    if (o.rfind("ensemble.", 0) == 0 && unset(config, "ensemble")) config["ensemble"] = ensemble_defaults();
    apply_override(config, o);
  }
  config["command"] = command;
  return config;
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

struct AdapterPlan {
  std::string builtin;
  double alpha = 0.5;
  std::string endpoint;
  std::chrono::milliseconds timeout = kDefaultAdapterTimeout;
  std::shared_ptr<const ClimatologyTable> climatology;

  std::unique_ptr<ModelAdapter> make(const FrameSource& truth) const {
    if (!endpoint.empty()) return std::make_unique<RemoteAdapter>(open_endpoint(endpoint), timeout);
    return serve_builtin(builtin, BuiltinParams{climatology, alpha, &truth});
  }
};

inline std::shared_ptr<const ClimatologyTable> optional_climatology(const json& config) {
  if (!config.contains("climatology") || unset(config, "climatology")) return nullptr;
  return std::make_shared<const ClimatologyTable>(load_climatology(required_path(config, "climatology")));
}

inline AdapterPlan adapter_plan(const json& config, std::shared_ptr<const ClimatologyTable> climatology) {
  const json& a = config.at("adapter");
  AdapterPlan p;
  p.alpha = get<double>(a, "alpha");
  p.timeout = std::chrono::milliseconds(long(get<double>(a, "timeout_s") * 1000.0));
  p.climatology = std::move(climatology);
  if (!unset(a, "command")) p.endpoint = get<std::string>(a, "command");
  if (!unset(a, "endpoint")) p.endpoint = "tcp:" + get<std::string>(a, "endpoint");
  if (p.endpoint.empty()) {
    p.builtin = get<std::string>(a, "builtin");
    static const std::vector<std::string> known{"persistence", "climatology_increment", "linear_decay", "oracle"};
    if (std::find(known.begin(), known.end(), p.builtin) == known.end()) {
      throw Error(ErrorKind::InvalidConfig, "unknown built-in adapter '" + p.builtin + "'");
    }
    if ((p.builtin == "climatology_increment" || p.builtin == "linear_decay") && !p.climatology) {
      throw Error(ErrorKind::InvalidConfig, "adapter '" + p.builtin + "' needs config key 'climatology'");
    }
  }
  return p;
}

struct RolloutPlan {
  std::shared_ptr<ManifestFrameSource> truth;
  std::shared_ptr<ManifestFrameSource> coarse;
  RolloutOptions options;
  std::vector<Timestamp> inits;
};

/// Init times of the split at `init_stride` steps whose whole window of truth
/// (history through the last lead) is available.
inline RolloutPlan rollout_plan(const json& config) {
  RolloutPlan p;
  const auto manifest = load_manifest_checked(required_path(config, "manifest"));
  const auto split = get<std::string>(config, "split");
  if (manifest.count(split) == 0) throw Error(ErrorKind::InvalidConfig, "split '" + split + "' is empty or missing");
  p.truth = std::make_shared<ManifestFrameSource>(manifest);

  const json& b = config.at("boundary");
  p.options.leads = get<std::size_t>(config, "leads");
  p.options.history = get<std::size_t>(config, "history");
  p.options.boundary.mode = parse_conditioning_mode(get<std::string>(b, "mode"));
  p.options.boundary.halo_width = get<std::size_t>(b, "halo_width");
  p.options.boundary.validate(*manifest.geometry);
  if (p.options.leads == 0) throw Error(ErrorKind::InvalidConfig, "leads must be positive");
  if (p.options.boundary.mode == ConditioningMode::CoarseConditioning) {
    p.coarse = std::make_shared<ManifestFrameSource>(load_manifest_checked(required_path(config, "coarse_manifest")));
  }

  const auto times = p.truth->times();
  const std::set<Timestamp> have(times.begin(), times.end());
  const auto window_ok = [&](Timestamp t) {
    for (long k = -long(p.options.history); k <= long(p.options.leads); ++k) {
      if (!have.count(t + kStep * k)) return false;
    }
    return true;
  };
  if (!config.at("inits").empty()) {
    for (const auto& s : config.at("inits")) {
      const Timestamp t = parse_iso(s.get<std::string>());
      if (!window_ok(t)) throw Error(ErrorKind::InvalidConfig, "truth does not cover the window from " + format_iso(t));
      p.inits.push_back(t);
    }
  } else {
    const auto stride = get<std::size_t>(config, "init_stride");
    const auto max_inits = get<std::size_t>(config, "max_inits");
    if (stride == 0) throw Error(ErrorKind::InvalidConfig, "init_stride must be positive");
    const auto& entries = manifest.split(split);
    std::vector<Timestamp> split_times;
    for (const auto& e : entries) split_times.push_back(e.time);
    std::sort(split_times.begin(), split_times.end());
    for (std::size_t k = 0; k < split_times.size(); k += stride) {
      if (!window_ok(split_times[k])) continue;
      p.inits.push_back(split_times[k]);
      if (max_inits > 0 && p.inits.size() == max_inits) break;
    }
  }
  if (p.inits.empty()) throw Error(ErrorKind::InvalidConfig, "no init time in split '" + split + "' has a full truth window");
  return p;
}

struct DenoiserPlan {
  std::string kind;
  double mean = 0.0;
  double std = 1.0;
  double value = 0.0;
  std::string endpoint;
  SamplerKind sampler = SamplerKind::Heun;
  NoiseSchedule schedule;

  std::unique_ptr<Denoiser> make(const AdapterCapabilities& caps) const {
    if (kind == "gaussian") return std::make_unique<GaussianDenoiser>(mean, std);
    if (kind == "constant") return std::make_unique<ConstantDenoiser>(value);
    return std::make_unique<RemoteDenoiser>(open_endpoint(endpoint), caps);
  }
};

inline DenoiserPlan denoiser_plan(const json& e) {
  DenoiserPlan p;
  const json& d = e.at("denoiser");
  p.kind = get<std::string>(d, "kind");
  p.mean = get<double>(d, "mean");
  p.std = get<double>(d, "std");
  p.value = get<double>(d, "value");
  if (p.kind == "external") {
    if (unset(d, "endpoint")) throw Error(ErrorKind::InvalidConfig, "external denoiser needs 'endpoint'");
    p.endpoint = get<std::string>(d, "endpoint");
  } else if (p.kind != "gaussian" && p.kind != "constant") {
    throw Error(ErrorKind::InvalidConfig, "unknown denoiser kind '" + p.kind + "'");
  }
  if (p.kind == "gaussian" && !(p.std > 0.0)) throw Error(ErrorKind::InvalidConfig, "gaussian denoiser needs std > 0");
  p.sampler = parse_sampler(get<std::string>(e, "sampler"));
  try {
    p.schedule = schedule_from_json(e.at("schedule"));
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::InvalidConfig, std::string("schedule: ") + ex.what());
  }
  return p;
}

/// Stable identifier of a run configuration, ignoring where it writes.
inline std::string config_id(json config) {
  config.erase("out");
  std::uint64_t h = 0;
  for (unsigned char c : config.dump()) h = mix64(h ^ c);
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_stamp(const fs::path& dir, const json& config) {
  write_text_atomic(dir / "config.json", config.dump(2) + "\n");
  write_text_atomic(dir / "VERSION", std::string("regbench ") + kVersion + "\n");
}

// ---------------------------------------------------------------------------
// Commands: each validates and returns the action to run.
// ---------------------------------------------------------------------------

inline Action prepare_synth(const json& config, std::size_t workers) {
  const auto seed = required_seed(config);
  SyntheticConfig synth;
  try {
    synth = synthetic_config_from_json(config.at("synthetic"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("synthetic: ") + e.what());
  }
  validate(synth);
  const auto factor = get<std::size_t>(config, "coarse_factor");
  if (factor == 1) throw Error(ErrorKind::InvalidConfig, "coarse_factor must be 0 (none) or at least 2");
  return [=](const fs::path& dir) {
    const auto manifest = generate_synthetic_dataset(seed, synth, dir, workers);
    if (factor >= 2) coarse_companion(manifest, factor, dir / "coarse", workers);
  };
}

/// Raw arrays: one file per time named YYYYMMDDHH.bin holding V*H*W
/// little-endian reals, channel-major then row-major.
inline Action prepare_ingest(const json& config, std::size_t workers) {
  const auto raw_dir = required_path(config, "raw_dir");
  if (unset(config, "catalog") || unset(config, "lat") || unset(config, "lon")) {
    throw Error(ErrorKind::InvalidConfig, "ingest needs 'catalog', 'lat' and 'lon'");
  }
  auto catalog = std::make_shared<const VariableCatalog>(catalog_from_json(config.at("catalog")));
  auto geometry = std::make_shared<const GridGeometry>(get<std::vector<double>>(config, "lat"),
                                                       get<std::vector<double>>(config, "lon"),
                                                       get<double>(config, "resolution_deg"));
  const DType raw = parse_dtype(get<std::string>(config, "raw_dtype"));
  const DType dtype = parse_dtype(get<std::string>(config, "dtype"));
  const auto ranges = splits_from_json(config.at("splits"));
  validate_split_ranges(ranges);

  std::vector<std::pair<Timestamp, fs::path>> inputs;
  for (const auto& entry : fs::directory_iterator(raw_dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() != ".bin" || name.size() != 14) continue;
    const auto stamp = name.substr(0, 10);
    if (!std::all_of(stamp.begin(), stamp.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) continue;
    const Timestamp t = make_time(std::stoi(stamp.substr(0, 4)), unsigned(std::stoi(stamp.substr(4, 2))),
                                  unsigned(std::stoi(stamp.substr(6, 2))), std::stoi(stamp.substr(8, 2)));
    inputs.emplace_back(t, entry.path());
  }
  if (inputs.empty()) throw Error(ErrorKind::InvalidConfig, "no YYYYMMDDHH.bin files in " + raw_dir.string());
  std::sort(inputs.begin(), inputs.end());

  return [=](const fs::path& dir) {
    std::vector<FrameRecord> records;
    for (const auto& [t, path] : inputs) {
      const int year = civil(t).year;
      for (const auto& r : ranges) {
        if (year >= r.first_year && year <= r.last_year) records.push_back({frame_relative_path(r.name, t), t, catalog, geometry});
      }
    }
    auto manifest = build_splits(records, ranges, dir);
    std::map<Timestamp, fs::path> source(inputs.begin(), inputs.end());
    const std::size_t count = catalog->size() * geometry->rows() * geometry->cols();
    parallel_for(records.size(), workers, [&](std::size_t k) {
      const auto bytes = read_file_bytes(source.at(records[k].time));
      if (bytes.size() != count * element_size(raw)) {
        throw Error(ErrorKind::FormatError, source.at(records[k].time).string() + " holds " + std::to_string(bytes.size()) +
                                                " bytes, expected " + std::to_string(count * element_size(raw)));
      }
      ByteReader in(bytes);
      Tensor3 values(Shape3{catalog->size(), geometry->rows(), geometry->cols()}, decode_elements(in, count, raw));
      write_frame(FieldFrame(records[k].time, std::move(values), catalog, geometry), dir / records[k].path, dtype);
    });
    save_manifest(manifest, dir / "manifest.json");
  };
}

inline Action prepare_stats(const json& config, std::size_t) {
  auto manifest = load_manifest_checked(required_path(config, "manifest"));
  const auto split = get<std::string>(config, "split");
  if (manifest.count(split) == 0) throw Error(ErrorKind::InvalidConfig, "split '" + split + "' is empty or missing");
  return [=](const fs::path& dir) {
    const auto stats = compute_normalization_stats(manifest, split);
    write_text_atomic(dir / "stats.json", stats_to_json(stats).dump(2) + "\n");
  };
}

inline Action prepare_climatology(const json& config, std::size_t workers) {
  auto manifest = load_manifest_checked(required_path(config, "manifest"));
  const auto split = get<std::string>(config, "split");
  if (manifest.count(split) == 0) throw Error(ErrorKind::InvalidConfig, "split '" + split + "' is empty or missing");
  const DType dtype = parse_dtype(get<std::string>(config, "dtype"));
  return [=](const fs::path& dir) {
    save_climatology(fit_climatology(manifest, split, workers), dir / "climatology", dtype);
  };
}

inline void write_trajectory(const Trajectory& t, const fs::path& dir, DType dtype) {
  for (std::size_t k = 1; k <= t.leads(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "lead_%03zu.rbf", k);
    write_frame(t.at_lead(k), dir / name, dtype);
  }
}

inline Action prepare_rollout(const json& config, std::size_t workers) {
  auto plan = std::make_shared<RolloutPlan>(rollout_plan(config));
  const auto adapter = adapter_plan(config, optional_climatology(config));
  const DType dtype = parse_dtype(get<std::string>(config, "dtype"));
  return [=](const fs::path& dir) {
    json index = json::array();
    for (Timestamp t : plan->inits) index.push_back({{"init", format_iso(t)}, {"dir", "trajectories/" + format_compact(t)}});
    parallel_for(plan->inits.size(), workers, [&](std::size_t k) {
      auto a = adapter.make(*plan->truth);
      const auto traj = rollout(*a, *plan->truth, plan->inits[k], plan->options, plan->coarse.get());
      write_trajectory(traj, dir / "trajectories" / format_compact(plan->inits[k]), dtype);
    });
    write_text_atomic(dir / "trajectories.json", json{{"leads", plan->options.leads}, {"trajectories", index}}.dump(2) + "\n");
  };
}

inline EvaluateOptions evaluate_options(const json& config, const RolloutPlan& plan, std::size_t workers) {
  EvaluateOptions opt;
  opt.metrics.clear();
  for (const auto& m : config.at("metrics")) opt.metrics.push_back(parse_metric(m.get<std::string>()));
  opt.mask = parse_mask_policy(get<std::string>(config, "mask"));
  opt.halo_width = plan.options.boundary.halo_width;
  opt.variables = get<std::vector<std::string>>(config, "variables");
  opt.fair_crps = get<bool>(config, "fair_crps");
  opt.workers = workers;
  opt.mode = plan.options.boundary.mode;
  opt.climatology = optional_climatology(config);
  return opt;
}

inline Action prepare_evaluate(const json& config, std::size_t workers) {
  auto plan = std::make_shared<RolloutPlan>(rollout_plan(config));
  auto opt = evaluate_options(config, *plan, workers);
  const bool ensemble = !unset(config, "ensemble");
  const auto adapter = adapter_plan(config, opt.climatology);
  std::optional<DenoiserPlan> denoiser;
  std::uint64_t seed = 0;
  if (ensemble) {
    denoiser = denoiser_plan(config.at("ensemble"));
    seed = required_seed(config);
  }
  check_options(opt, ensemble ? denoiser->schedule.ensemble_size : 1);
  const auto variables = report_variables(*plan->truth->manifest().catalog, opt);
  if (opt.mask == MaskPolicy::Interior) {
    interior_ranges(plan->truth->manifest().geometry->rows(), plan->truth->manifest().geometry->cols(), opt.halo_width);
  }
  opt.run_id = config_id(config);

  return [=](const fs::path& dir) {
    std::vector<CaseScores> scores(plan->inits.size());
    parallel_for(plan->inits.size(), workers, [&](std::size_t k) {
      const Timestamp init = plan->inits[k];
      ForecastCase c;
      if (ensemble) {
        const FieldFrame first = plan->truth->get(init);
        const auto den = denoiser->make(AdapterCapabilities{first.catalog(), first.geometry(), plan->options.history,
                                                            plan->options.boundary.mode, plan->options.boundary.halo_width});
        c = to_case(ensemble_rollout(*den, *plan->truth, init, plan->options, denoiser->schedule,
                                     hash_key({seed, std::uint64_t(to_unix(init))}), denoiser->sampler, 1,
                                     plan->coarse.get()));
      } else {
        auto a = adapter.make(*plan->truth);
        c = to_case(rollout(*a, *plan->truth, init, plan->options, plan->coarse.get()));
      }
      scores[k] = score_case(c, *plan->truth, opt, variables);
    });
    const auto report = aggregate(std::move(scores), opt, variables);
    write_text_atomic(dir / "report.csv", report.to_csv());
    write_text_atomic(dir / "report.json", report.to_json().dump(2) + "\n");
  };
}

inline Action prepare_sample(const json& config, std::size_t workers) {
  const auto plan = denoiser_plan(config);
  const auto seed = required_seed(config);
  const auto shape = get<std::vector<std::size_t>>(config, "shape");
  if (shape.size() != 3 || shape[0] == 0 || shape[1] == 0 || shape[2] == 0) {
    throw Error(ErrorKind::InvalidConfig, "shape must be [V, H, W] with positive entries");
  }
  return [=](const fs::path& dir) {
    std::vector<Channel> channels;
    for (std::size_t v = 0; v < shape[0]; ++v) channels.push_back({"x" + std::to_string(v), std::nullopt, "1"});
    auto catalog = std::make_shared<const VariableCatalog>(std::move(channels));
    auto geometry = std::make_shared<const GridGeometry>(GridGeometry::regular(0.0, 0.0, 1.0, shape[1], shape[2]));
    const auto den = plan.make(AdapterCapabilities{catalog, geometry, 0, ConditioningMode::BoundaryForcing, 0});
    const auto members = generate_ensemble(*den, Shape3{shape[0], shape[1], shape[2]}, {}, plan.schedule, seed,
                                           plan.sampler, workers);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t m = 0; m < members.size(); ++m) {
      char name[32];
      std::snprintf(name, sizeof name, "member_%03zu.rbf", m);
      write_frame(FieldFrame(from_unix(0), members[m], catalog, geometry), dir / "members" / name);
      for (double x : members[m].data()) sum += x, ++n;
    }
    const double mean = sum / double(n);
    for (const auto& m : members) {
      for (double x : m.data()) sq += (x - mean) * (x - mean);
    }
    const json summary{{"members", members.size()},
                       {"sampler", to_string(plan.sampler)},
                       {"sigmas", sigma_schedule(plan.schedule)},
                       {"mean", mean},
                       {"std", n > 1 ? std::sqrt(sq / double(n - 1)) : 0.0}};
    write_text_atomic(dir / "summary.json", summary.dump(2) + "\n");
  };
}

inline Action prepare_extreme(json config, std::size_t) {
  for (const char* key : {"init", "start", "end"}) {
    if (unset(config, key)) throw Error(ErrorKind::InvalidConfig, std::string("config key '") + key + "' is required");
  }
  const Timestamp init = parse_iso(get<std::string>(config, "init"));
  const Timestamp start = parse_iso(get<std::string>(config, "start"));
  const Timestamp end = parse_iso(get<std::string>(config, "end"));
  const int hour = get<int>(config, "hour");
  const Timestamp last = Timestamp(std::chrono::floor<std::chrono::days>(end)) + std::chrono::hours{hour};
  if (last < init) throw Error(ErrorKind::InvalidConfig, "event window ends before the init time");
  config["leads"] = std::max<long>(1, long((last - init) / kStep));
  config["inits"] = json::array({format_iso(init)});
  auto plan = std::make_shared<RolloutPlan>(rollout_plan(config));
  const auto adapter = adapter_plan(config, optional_climatology(config));
  const json& b = config.at("box");
  const RegionBox box{get<double>(b, "lat_min"), get<double>(b, "lat_max"), get<double>(b, "lon_min"),
                      get<double>(b, "lon_max"), get<std::string>(b, "label")};
  const auto variables = get<std::vector<std::string>>(config, "variables");
  for (const auto& v : variables) plan->truth->manifest().catalog->index_of(v);
  return [=](const fs::path& dir) {
    auto a = adapter.make(*plan->truth);
    const auto traj = rollout(*a, *plan->truth, init, plan->options, plan->coarse.get());
    const auto series = event_series(traj, *plan->truth, box, start, end, hour, variables);
    write_text_atomic(dir / "event_series.csv", series.to_csv());
  };
}

inline Action prepare(const std::string& command, const json& config, std::size_t workers) {
  if (command == "synth") return prepare_synth(config, workers);
  if (command == "ingest") return prepare_ingest(config, workers);
  if (command == "stats") return prepare_stats(config, workers);
  if (command == "climatology") return prepare_climatology(config, workers);
  if (command == "rollout") return prepare_rollout(config, workers);
  if (command == "evaluate") return prepare_evaluate(config, workers);
  if (command == "sample") return prepare_sample(config, workers);
  if (command == "extreme") return prepare_extreme(config, workers);
  throw Error(ErrorKind::InvalidConfig, "unknown command '" + command + "'");
}

/// Adapter side of the protocol for the built-in models.
inline int serve_command(const std::string& model, const std::string& transport, const std::string& climatology_dir,
                         double alpha, double mean, double std, std::ostream& err) {
  std::shared_ptr<const ClimatologyTable> clim;
  if (!climatology_dir.empty()) clim = std::make_shared<const ClimatologyTable>(load_climatology(climatology_dir));
  std::unique_ptr<ModelAdapter> forecaster;
  std::unique_ptr<Denoiser> denoiser;
  if (model == "gaussian-denoiser") {
    denoiser = std::make_unique<GaussianDenoiser>(mean, std);
  } else {
    forecaster = serve_builtin(model, BuiltinParams{clim, alpha, nullptr});
  }
  const ServeHandlers handlers{forecaster.get(), denoiser.get()};
  if (transport == "stdio") {
    StdioStream stream;
    serve(stream, handlers);
    return 0;
  }
  if (transport.rfind("tcp:", 0) == 0) {
    TcpListener listener(std::uint16_t(std::stoul(transport.substr(4))));
    err << "listening on 127.0.0.1:" << listener.port() << "\n";
    auto stream = listener.accept();
    serve(*stream, handlers);
    return 0;
  }
  throw Error(ErrorKind::InvalidConfig, "transport must be stdio or tcp:PORT");
}

}  // namespace cli

/// Entry point of the `regbench` executable.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Regional weather-emulation benchmark engine", "regbench"};
  app.set_version_flag("--version", std::string("regbench ") + kVersion);
  app.require_subcommand(1);

  struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::size_t> workers;
    std::optional<std::string> out;
    bool force = false;
  };
  Common common;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "generate a synthetic dataset"},
      {"ingest", "convert raw arrays to RBF1 frames and a manifest"},
      {"stats", "per-channel normalization statistics"},
      {"climatology", "fit and save the calendar climatology"},
      {"rollout", "write forecast trajectories"},
      {"evaluate", "roll out and score against truth"},
      {"sample", "draw diffusion ensembles"},
      {"extreme", "box-mean event time series"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", common.config, "run configuration (JSON)");
    sub->add_option("--set", common.sets, "override a config key, KEY=VALUE");
    sub->add_option("--workers", common.workers, "worker threads");
    sub->add_option("--out", common.out, "output directory");
    sub->add_flag("--force", common.force, "write into --out directly");
  }
  std::string model = "persistence", transport = "stdio", clim_dir;
  double alpha = 0.5, mean = 0.0, std_dev = 1.0;
  auto* serve_cmd = app.add_subcommand("serve", "answer wire-protocol requests with a built-in model");
  serve_cmd->add_option("--model", model, "persistence | climatology_increment | linear_decay | gaussian-denoiser");
  serve_cmd->add_option("--transport", transport, "stdio | tcp:PORT");
  serve_cmd->add_option("--climatology", clim_dir, "climatology directory");
  serve_cmd->add_option("--alpha", alpha);
  serve_cmd->add_option("--mean", mean);
  serve_cmd->add_option("--std", std_dev);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  const auto* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  if (command == "serve") {
    try {
      return cli::serve_command(model, transport, clim_dir, alpha, mean, std_dev, err);
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return e.kind() == ErrorKind::InvalidConfig ? 2 : 1;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }
  }

  json config;
  cli::Action action;
  std::size_t workers = 1;
  try {
    std::optional<fs::path> file;
    if (!common.config.empty()) file = common.config;
    auto sets = common.sets;
    if (common.out) sets.push_back("out=" + json(*common.out).dump());
    config = cli::resolve_config(command, file, sets);
    workers = common.workers.value_or(default_workers());
    if (workers == 0) throw Error(ErrorKind::InvalidConfig, "--workers must be positive");
    action = cli::prepare(command, config, workers);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const auto dir = cli::make_run_dir(cli::get<std::string>(config, "out"), command, common.force);
    cli::write_stamp(dir, config);
    action(dir);
    out << dir.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace regbench
