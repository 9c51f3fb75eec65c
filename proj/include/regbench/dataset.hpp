#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#if __has_include(<nlohmann/json.hpp>)
#include <nlohmann/json.hpp>
#else
#include <json.hpp>
#endif

#include "regbench/frame_io.hpp"
#include "regbench/grid.hpp"
#include "regbench/parallel.hpp"
#include "regbench/random.hpp"

namespace regbench {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// JSON forms of catalog and geometry
// ---------------------------------------------------------------------------

inline json catalog_to_json(const VariableCatalog& catalog) {
  json out = json::array();
  for (const auto& c : catalog.channels()) {
    out.push_back({{"name", c.name}, {"level", c.level_hpa ? json(*c.level_hpa) : json(nullptr)}, {"units", c.units}});
  }
  return out;
}

inline VariableCatalog catalog_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::FormatError, "catalog must be an array");
  std::vector<Channel> channels;
  for (const auto& e : j) {
    Channel c;
    if (e.is_string()) {
      c.name = e.get<std::string>();
    } else {
      c.name = e.at("name").get<std::string>();
      if (e.contains("level") && !e.at("level").is_null() && e.at("level").get<int>() != 0) {
        c.level_hpa = e.at("level").get<int>();
      }
      c.units = e.value("units", std::string());
    }
    channels.push_back(std::move(c));
  }
  return VariableCatalog(std::move(channels));
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct SplitRange {
  std::string name;
  int first_year = 0;
  int last_year = 0;
};

/// training 2000-2017, validation 2018, test 2019
inline std::vector<SplitRange> standard_splits() {
  return {{"train", 2000, 2017}, {"val", 2018, 2018}, {"test", 2019, 2019}};
}

inline json splits_to_json(const std::vector<SplitRange>& ranges) {
  json out = json::array();
  for (const auto& r : ranges) out.push_back({{"name", r.name}, {"first_year", r.first_year}, {"last_year", r.last_year}});
  return out;
}

inline std::vector<SplitRange> splits_from_json(const json& j) {
  std::vector<SplitRange> out;
  for (const auto& e : j) out.push_back({e.at("name").get<std::string>(), e.at("first_year").get<int>(), e.at("last_year").get<int>()});
  return out;
}

inline void validate_split_ranges(const std::vector<SplitRange>& ranges) {
  std::set<std::string> names;
  for (const auto& r : ranges) {
    if (r.first_year > r.last_year) throw Error(ErrorKind::InvalidConfig, "split '" + r.name + "' has an empty year range");
    if (!names.insert(r.name).second) throw Error(ErrorKind::InvalidConfig, "split '" + r.name + "' listed twice");
  }
  for (std::size_t a = 0; a < ranges.size(); ++a) {
    for (std::size_t b = a + 1; b < ranges.size(); ++b) {
      if (ranges[a].first_year <= ranges[b].last_year && ranges[b].first_year <= ranges[a].last_year) {
        throw Error(ErrorKind::InvalidConfig, "splits '" + ranges[a].name + "' and '" + ranges[b].name + "' overlap");
      }
    }
  }
}

struct ManifestEntry {
  Timestamp time;
  /// Relative to the manifest's directory.
  std::string path;
};

struct DatasetManifest {
  CatalogPtr catalog;
  GeometryPtr geometry;
  int step_hours = kStepHours;
  std::map<std::string, std::vector<ManifestEntry>> splits;
  /// Directory that entry paths resolve against; not serialized.
  fs::path root;

  fs::path resolve(const ManifestEntry& e) const { return root / e.path; }

  const std::vector<ManifestEntry>& split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw Error(ErrorKind::EmptySplit, "manifest has no split '" + name + "'");
    return it->second;
  }

  std::size_t count(const std::string& name) const {
    auto it = splits.find(name);
    return it == splits.end() ? 0 : it->second.size();
  }
};

inline json manifest_to_json(const DatasetManifest& m) {
  json out;
  out["catalog"] = m.catalog ? catalog_to_json(*m.catalog) : json::array();
  out["lat"] = m.geometry ? json(m.geometry->lat()) : json::array();
  out["lon"] = m.geometry ? json(m.geometry->lon()) : json::array();
  out["resolution_deg"] = m.geometry ? m.geometry->resolution_deg() : 0.0;
  out["step_hours"] = m.step_hours;
  json splits = json::object();
  for (const auto& [name, entries] : m.splits) {
    json list = json::array();
    for (const auto& e : entries) list.push_back({{"time", format_iso(e.time)}, {"path", e.path}});
    splits[name] = std::move(list);
  }
  out["splits"] = std::move(splits);
  return out;
}

inline DatasetManifest manifest_from_json(const json& j, fs::path root) {
  DatasetManifest m;
  m.root = std::move(root);
  try {
    auto catalog = catalog_from_json(j.at("catalog"));
    const auto lat = j.at("lat").get<std::vector<double>>();
    const auto lon = j.at("lon").get<std::vector<double>>();
    if (catalog.size() > 0) m.catalog = std::make_shared<const VariableCatalog>(std::move(catalog));
    if (!lat.empty() || !lon.empty()) {
      m.geometry = std::make_shared<const GridGeometry>(lat, lon, j.value("resolution_deg", 0.0));
    }
    m.step_hours = j.value("step_hours", kStepHours);
    if (m.step_hours != kStepHours) throw Error(ErrorKind::FormatError, "only 6-hour manifests are supported");
    for (const auto& [name, list] : j.at("splits").items()) {
      auto& entries = m.splits[name];
      for (const auto& e : list) entries.push_back({parse_iso(e.at("time").get<std::string>()), e.at("path").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  write_text_atomic(path, manifest_to_json(m).dump(1) + "\n");
}

inline DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::IoError, "manifest " + path.string() + " does not exist");
  const auto bytes = read_file_bytes(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, "manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

/// Checks ordering and alignment within splits and that split time ranges
/// do not overlap. With `check_files`, every frame is decoded and its
/// timestamp compared against the entry.
inline void validate_manifest(const DatasetManifest& m, bool check_files) {
  std::vector<std::pair<Timestamp, Timestamp>> spans;
  for (const auto& [name, entries] : m.splits) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (!is_step_aligned(entries[k].time)) {
        throw Error(ErrorKind::FormatError, "split '" + name + "' entry " + format_iso(entries[k].time) + " not 6-hour aligned");
      }
      if (k > 0 && !(entries[k].time > entries[k - 1].time)) {
        throw Error(ErrorKind::FormatError, "split '" + name + "' timestamps not strictly increasing at " +
                                                format_iso(entries[k].time));
      }
      if (check_files) {
        const auto frame = read_frame(m.resolve(entries[k]));
        if (frame.time() != entries[k].time) {
          throw Error(ErrorKind::FormatError, entries[k].path + " holds " + format_iso(frame.time()) + ", manifest says " +
                                                  format_iso(entries[k].time));
        }
        if (m.catalog && *frame.catalog() != *m.catalog) throw Error(ErrorKind::CatalogMismatch, entries[k].path);
      }
    }
    if (!entries.empty()) spans.emplace_back(entries.front().time, entries.back().time);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t k = 1; k < spans.size(); ++k) {
    if (!(spans[k].first > spans[k - 1].second)) throw Error(ErrorKind::FormatError, "split time ranges overlap");
  }
}

// ---------------------------------------------------------------------------
// Split construction
// ---------------------------------------------------------------------------

struct FrameRecord {
  std::string path;
  Timestamp time;
  CatalogPtr catalog;
  GeometryPtr geometry;
};

/// Assigns each record to the split whose year range contains its calendar
/// year. Records outside every range are left out.
inline DatasetManifest build_splits(const std::vector<FrameRecord>& records, const std::vector<SplitRange>& ranges,
                                    fs::path root = {}) {
  validate_split_ranges(ranges);
  DatasetManifest m;
  m.root = std::move(root);
  for (const auto& r : ranges) m.splits[r.name];

  std::set<Timestamp> seen;
  for (const auto& rec : records) {
    if (!rec.catalog || !rec.geometry) throw Error(ErrorKind::InvalidConfig, "record " + rec.path + " lacks catalog or geometry");
    if (!m.catalog) {
      m.catalog = rec.catalog;
      m.geometry = rec.geometry;
    } else {
      if (!(rec.catalog == m.catalog || *rec.catalog == *m.catalog)) {
        throw Error(ErrorKind::CatalogMismatch, "record " + rec.path + " uses a different catalog");
      }
      if (!(rec.geometry == m.geometry || *rec.geometry == *m.geometry)) {
        throw Error(ErrorKind::CatalogMismatch, "record " + rec.path + " uses a different geometry");
      }
    }
    if (!is_step_aligned(rec.time)) throw Error(ErrorKind::InvalidConfig, "record " + rec.path + " is not 6-hour aligned");
    if (!seen.insert(rec.time).second) throw Error(ErrorKind::DuplicateTimestamp, format_iso(rec.time));

    const int year = civil(rec.time).year;
    for (const auto& r : ranges) {
      if (year >= r.first_year && year <= r.last_year) {
        m.splits[r.name].push_back({rec.time, rec.path});
        break;
      }
    }
  }
  for (auto& [name, entries] : m.splits) {
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
  }
  return m;
}

/// Every 6-hour step of the given calendar years.
inline std::vector<Timestamp> calendar_steps(int first_year, int last_year) {
  std::vector<Timestamp> out;
  for (Timestamp t = make_time(first_year, 1, 1); t < make_time(last_year + 1, 1, 1); t += kStep) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Frame sources
// ---------------------------------------------------------------------------

/// Random access to truth frames by valid time.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<FieldFrame> find(Timestamp t) const = 0;
  virtual std::vector<Timestamp> times() const = 0;

  FieldFrame get(Timestamp t) const {
    if (auto f = find(t)) return std::move(*f);
    throw Error(ErrorKind::MissingFrame, "no frame at " + format_iso(t));
  }
};

class MemoryFrameSource final : public FrameSource {
 public:
  MemoryFrameSource() = default;
  explicit MemoryFrameSource(const std::vector<FieldFrame>& frames) {
    for (const auto& f : frames) add(f);
  }
  void add(const FieldFrame& f) {
    if (!frames_.emplace(f.time(), f).second) throw Error(ErrorKind::DuplicateTimestamp, format_iso(f.time()));
  }
  std::optional<FieldFrame> find(Timestamp t) const override {
    auto it = frames_.find(t);
    if (it == frames_.end()) return std::nullopt;
    return it->second;
  }
  std::vector<Timestamp> times() const override {
    std::vector<Timestamp> out;
    for (const auto& [t, f] : frames_) out.push_back(t);
    return out;
  }

 private:
  std::map<Timestamp, FieldFrame> frames_;
};

/// Frames of a manifest (all splits, or one), decoded on demand.
class ManifestFrameSource final : public FrameSource {
 public:
  explicit ManifestFrameSource(DatasetManifest manifest, std::optional<std::string> only_split = std::nullopt)
      : manifest_(std::move(manifest)) {
    for (const auto& [name, entries] : manifest_.splits) {
      if (only_split && name != *only_split) continue;
      for (const auto& e : entries) index_[e.time] = manifest_.resolve(e);
    }
  }
  std::optional<FieldFrame> find(Timestamp t) const override {
    auto it = index_.find(t);
    if (it == index_.end()) return std::nullopt;
    auto frame = read_frame(it->second);
    if (frame.time() != t) {
      throw Error(ErrorKind::FormatError, it->second.string() + " holds " + format_iso(frame.time()) + ", expected " +
                                              format_iso(t));
    }
    return frame;
  }
  std::vector<Timestamp> times() const override {
    std::vector<Timestamp> out;
    for (const auto& [t, p] : index_) out.push_back(t);
    return out;
  }
  const DatasetManifest& manifest() const { return manifest_; }

 private:
  DatasetManifest manifest_;
  std::map<Timestamp, fs::path> index_;
};

// ---------------------------------------------------------------------------
// Normalization statistics
// ---------------------------------------------------------------------------

inline constexpr double kStdFloor = 1e-6;

struct NormalizationStats {
  std::vector<std::string> channels;
  std::vector<double> mean;
  std::vector<double> std;
};

inline json stats_to_json(const NormalizationStats& s) {
  json out = json::array();
  for (std::size_t v = 0; v < s.channels.size(); ++v) {
    out.push_back({{"channel", s.channels[v]}, {"mean", s.mean[v]}, {"std", s.std[v]}});
  }
  return json{{"std_floor", kStdFloor}, {"channels", out}};
}

inline NormalizationStats stats_from_json(const json& j) {
  NormalizationStats s;
  for (const auto& e : j.at("channels")) {
    s.channels.push_back(e.at("channel").get<std::string>());
    s.mean.push_back(e.at("mean").get<double>());
    s.std.push_back(std::max(e.at("std").get<double>(), kStdFloor));
  }
  return s;
}

/// Per-channel mean and population variance, merged frame by frame
/// (pairwise update of count, mean and sum of squared deviations).
class StatsAccumulator {
 public:
  void add(const FieldFrame& frame) {
    if (!catalog_) {
      catalog_ = frame.catalog();
      count_.assign(catalog_->size(), 0.0);
      mean_.assign(catalog_->size(), 0.0);
      m2_.assign(catalog_->size(), 0.0);
    } else if (*frame.catalog() != *catalog_) {
      throw Error(ErrorKind::CatalogMismatch, "frame at " + format_iso(frame.time()));
    }
    for (std::size_t v = 0; v < catalog_->size(); ++v) {
      const auto x = frame.channel(v);
      const double n = double(x.size());
      double mean = 0.0;
      for (double e : x) mean += e;
      mean /= n;
      double m2 = 0.0;
      for (double e : x) m2 += (e - mean) * (e - mean);
      const double total = count_[v] + n;
      const double delta = mean - mean_[v];
      mean_[v] += delta * n / total;
      m2_[v] += m2 + delta * delta * count_[v] * n / total;
      count_[v] = total;
    }
  }

  NormalizationStats finish() const {
    if (!catalog_) throw Error(ErrorKind::EmptySplit, "no frames to compute statistics from");
    NormalizationStats s;
    s.channels = channel_names(*catalog_);
    s.mean = mean_;
    for (std::size_t v = 0; v < mean_.size(); ++v) s.std.push_back(std::max(std::sqrt(m2_[v] / count_[v]), kStdFloor));
    return s;
  }

 private:
  CatalogPtr catalog_;
  std::vector<double> count_, mean_, m2_;
};

inline NormalizationStats compute_normalization_stats(const DatasetManifest& manifest, const std::string& split = "train") {
  const auto& entries = manifest.split(split);
  if (entries.empty()) throw Error(ErrorKind::EmptySplit, "split '" + split + "' is empty");
  StatsAccumulator acc;
  for (const auto& e : entries) acc.add(read_frame(manifest.resolve(e)));
  return acc.finish();
}

namespace detail {
inline void require_stats_match(const FieldFrame& frame, const NormalizationStats& stats) {
  if (channel_names(*frame.catalog()) != stats.channels) {
    throw Error(ErrorKind::CatalogMismatch, "normalization statistics cover a different channel list");
  }
}
}  // namespace detail

inline FieldFrame normalize(const FieldFrame& frame, const NormalizationStats& stats) {
  detail::require_stats_match(frame, stats);
  Tensor3 out = frame.values();
  for (std::size_t v = 0; v < stats.channels.size(); ++v) {
    for (auto& x : out.channel(v)) x = (x - stats.mean[v]) / stats.std[v];
  }
  return frame.with_values(std::move(out));
}

inline FieldFrame denormalize(const FieldFrame& frame, const NormalizationStats& stats) {
  detail::require_stats_match(frame, stats);
  Tensor3 out = frame.values();
  for (std::size_t v = 0; v < stats.channels.size(); ++v) {
    for (auto& x : out.channel(v)) x = x * stats.std[v] + stats.mean[v];
  }
  return frame.with_values(std::move(out));
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  std::size_t channels = 3;
  std::size_t rows = 32;
  std::size_t cols = 32;
  int first_year = 2001;
  int num_years = 2;
  double lat0 = 6.0;
  double lon0 = 66.6;
  /// 32 cells at 0.96 degrees span roughly the 6N-36.7N, 66.6E-97.3E domain.
  double resolution_deg = 0.96;
  double seasonal_amplitude = 8.0;
  double diurnal_amplitude = 3.0;
  double wave_amplitude = 4.0;
  double wavelength_cells = 16.0;
  /// Westward drift of the wave pattern in cells per 6-hour step.
  double advection_cells_per_step = 0.25;
  double noise_amplitude = 0.5;
  DType dtype = DType::Float64;
  std::vector<SplitRange> splits = standard_splits();
};

inline json synthetic_config_to_json(const SyntheticConfig& c) {
  return json{{"channels", c.channels},
              {"rows", c.rows},
              {"cols", c.cols},
              {"first_year", c.first_year},
              {"num_years", c.num_years},
              {"lat0", c.lat0},
              {"lon0", c.lon0},
              {"resolution_deg", c.resolution_deg},
              {"seasonal_amplitude", c.seasonal_amplitude},
              {"diurnal_amplitude", c.diurnal_amplitude},
              {"wave_amplitude", c.wave_amplitude},
              {"wavelength_cells", c.wavelength_cells},
              {"advection_cells_per_step", c.advection_cells_per_step},
              {"noise_amplitude", c.noise_amplitude},
              {"dtype", to_string(c.dtype)},
              {"splits", splits_to_json(c.splits)}};
}

inline SyntheticConfig synthetic_config_from_json(const json& j) {
  SyntheticConfig c;
  c.channels = j.value("channels", c.channels);
  c.rows = j.value("rows", c.rows);
  c.cols = j.value("cols", c.cols);
  c.first_year = j.value("first_year", c.first_year);
  c.num_years = j.value("num_years", c.num_years);
  c.lat0 = j.value("lat0", c.lat0);
  c.lon0 = j.value("lon0", c.lon0);
  c.resolution_deg = j.value("resolution_deg", c.resolution_deg);
  c.seasonal_amplitude = j.value("seasonal_amplitude", c.seasonal_amplitude);
  c.diurnal_amplitude = j.value("diurnal_amplitude", c.diurnal_amplitude);
  c.wave_amplitude = j.value("wave_amplitude", c.wave_amplitude);
  c.wavelength_cells = j.value("wavelength_cells", c.wavelength_cells);
  c.advection_cells_per_step = j.value("advection_cells_per_step", c.advection_cells_per_step);
  c.noise_amplitude = j.value("noise_amplitude", c.noise_amplitude);
  if (j.contains("dtype")) c.dtype = parse_dtype(j.at("dtype").get<std::string>());
  if (j.contains("splits")) c.splits = splits_from_json(j.at("splits"));
  return c;
}

inline void validate(const SyntheticConfig& c) {
  if (c.num_years <= 0) throw Error(ErrorKind::EmptySplit, "synthetic dataset needs at least one year");
  if (c.channels == 0 || c.rows == 0 || c.cols == 0) throw Error(ErrorKind::InvalidConfig, "synthetic grid must be non-empty");
  if (c.channels > curated_catalog().size()) {
    throw Error(ErrorKind::InvalidConfig, "at most " + std::to_string(curated_catalog().size()) + " synthetic channels");
  }
  if (!(c.resolution_deg > 0.0) || !(c.wavelength_cells > 0.0)) throw Error(ErrorKind::InvalidConfig, "spacing must be positive");
  validate_split_ranges(c.splits);
}

/// The first `channels` entries of the curated catalog.
inline VariableCatalog synthetic_catalog(std::size_t channels) {
  auto all = curated_catalog().channels();
  all.resize(channels);
  return VariableCatalog(std::move(all));
}

inline GridGeometry synthetic_geometry(const SyntheticConfig& c) {
  return GridGeometry::regular(c.lat0, c.lon0, c.resolution_deg, c.rows, c.cols);
}

namespace detail {
inline double synthetic_base(const Channel& c) {
  const std::string& n = c.name;
  if (n == "TMP") return 300.0;
  if (n == "PRMSL") return 100800.0;
  if (n == "APCP") return 2.0;
  if (n == "TCDCRO") return 40.0;
  if (n.rfind("TMP_prl", 0) == 0) return 300.0 - 0.1 * (1000.0 - double(c.level_hpa.value_or(1000)));
  if (n.rfind("HGT", 0) == 0) return 44330.0 * (1.0 - std::pow(double(c.level_hpa.value_or(1000)) / 1013.25, 0.19));
  if (n.rfind("RH", 0) == 0) return 60.0;
  if (n == "MTERH") return 500.0;
  if (n == "LAND") return 0.5;
  return 0.0;  // wind components
}

inline constexpr std::array<int, 12> kNoLeapMonthStart{0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
}  // namespace detail

/// The synthetic state at `t`: seasonal cycle keyed on (month, day, hour), a
/// diurnal cycle in local solar time, a westward-drifting wave, and seeded
/// noise addressed by (seed, t, channel, i, j).
inline FieldFrame synthesize_frame(std::uint64_t seed, const SyntheticConfig& c, const CatalogPtr& catalog,
                                   const GeometryPtr& geometry, Timestamp t) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const auto cv = civil(t);
  const double day_index = double(detail::kNoLeapMonthStart[cv.month - 1] + int(cv.day) - 1);
  const double season_phase = two_pi * (day_index + cv.hour / 24.0) / 365.0;
  const double steps = double((t - make_time(2000, 1, 1)).count()) / (3600.0 * kStepHours);
  const double drift = std::fmod(c.advection_cells_per_step * steps, c.wavelength_cells);

  Tensor3 values(Shape3{catalog->size(), geometry->rows(), geometry->cols()});
  for (std::size_t v = 0; v < catalog->size(); ++v) {
    const double base = detail::synthetic_base((*catalog)[v]);
    const double fv = double(v);
    for (std::size_t i = 0; i < geometry->rows(); ++i) {
      const double lat = geometry->lat()[i];
      const double seasonal =
          c.seasonal_amplitude * (1.0 + 0.5 * std::sin(lat * std::numbers::pi / 180.0)) * std::sin(season_phase + 0.7 * fv);
      for (std::size_t j = 0; j < geometry->cols(); ++j) {
        const double lon = geometry->lon()[j];
        const double diurnal = c.diurnal_amplitude * std::sin(two_pi * (cv.hour + lon / 15.0) / 24.0 + 0.3 * fv);
        const double wave = c.wave_amplitude *
                            std::sin(two_pi * (double(j) + drift) / c.wavelength_cells + two_pi * double(i) / c.wavelength_cells + fv);
        double x = base + seasonal + diurnal + wave;
        if (c.noise_amplitude != 0.0) {
          x += c.noise_amplitude * counter_normal(hash_key({seed, std::uint64_t(to_unix(t)), v, i, j}));
        }
        values(v, i, j) = c.dtype == DType::Float32 ? double(float(x)) : x;
      }
    }
  }
  return FieldFrame(t, std::move(values), catalog, geometry);
}

inline std::string frame_relative_path(const std::string& split, Timestamp t) {
  return split + "/" + format_compact(t) + ".rbf";
}

/// Writes every assigned frame under `out_dir` and a manifest.json next to them.
inline DatasetManifest generate_synthetic_dataset(std::uint64_t seed, const SyntheticConfig& c, const fs::path& out_dir,
                                                  std::size_t workers = 1) {
  validate(c);
  auto catalog = std::make_shared<const VariableCatalog>(synthetic_catalog(c.channels));
  auto geometry = std::make_shared<const GridGeometry>(synthetic_geometry(c));

  std::vector<FrameRecord> records;
  for (Timestamp t : calendar_steps(c.first_year, c.first_year + c.num_years - 1)) {
    const int year = civil(t).year;
    for (const auto& r : c.splits) {
      if (year >= r.first_year && year <= r.last_year) {
        records.push_back({frame_relative_path(r.name, t), t, catalog, geometry});
        break;
      }
    }
  }
  auto manifest = build_splits(records, c.splits, out_dir);
  parallel_for(records.size(), workers, [&](std::size_t k) {
    write_frame(synthesize_frame(seed, c, catalog, geometry, records[k].time), out_dir / records[k].path, c.dtype);
  });
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

// ---------------------------------------------------------------------------
// Coarse companion
// ---------------------------------------------------------------------------

/// Block-mean downsampling by `factor` in both directions; trailing rows and
/// columns that do not fill a whole block are dropped.
inline FieldFrame block_mean_downsample(const FieldFrame& frame, std::size_t factor) {
  if (factor < 2) throw Error(ErrorKind::InvalidConfig, "downsampling factor must be at least 2");
  const auto& g = *frame.geometry();
  const std::size_t rows = g.rows() / factor, cols = g.cols() / factor;
  if (rows == 0 || cols == 0) throw Error(ErrorKind::InvalidConfig, "factor larger than the grid");

  std::vector<double> lat(rows), lon(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < factor; ++a) s += g.lat()[i * factor + a];
    lat[i] = s / double(factor);
  }
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t b = 0; b < factor; ++b) s += g.lon()[j * factor + b];
    lon[j] = s / double(factor);
  }
  Tensor3 out(Shape3{frame.shape().channels, rows, cols});
  const double cells = double(factor * factor);
  for (std::size_t v = 0; v < frame.shape().channels; ++v) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t a = 0; a < factor; ++a) {
          for (std::size_t b = 0; b < factor; ++b) s += frame(v, i * factor + a, j * factor + b);
        }
        out(v, i, j) = s / cells;
      }
    }
  }
  auto geometry = std::make_shared<const GridGeometry>(std::move(lat), std::move(lon), g.resolution_deg() * double(factor));
  return FieldFrame(frame.time(), std::move(out), frame.catalog(), std::move(geometry));
}

/// Block-mean copy of every frame of `manifest`, written under `out_dir`
/// with the same relative paths. Stands in for a coarse global analysis.
inline DatasetManifest coarse_companion(const DatasetManifest& manifest, std::size_t factor, const fs::path& out_dir,
                                        std::size_t workers = 1) {
  if (factor < 2) throw Error(ErrorKind::InvalidConfig, "downsampling factor must be at least 2");
  DatasetManifest out;
  out.root = out_dir;
  out.catalog = manifest.catalog;
  out.step_hours = manifest.step_hours;
  std::vector<const ManifestEntry*> all;
  for (const auto& [name, entries] : manifest.splits) {
    out.splits[name] = entries;
    for (const auto& e : entries) all.push_back(&e);
  }
  std::vector<GeometryPtr> geometries(all.size());
  parallel_for(all.size(), workers, [&](std::size_t k) {
    const auto decoded = decode_frame_with_dtype(read_file_bytes(manifest.resolve(*all[k])));
    auto coarse = block_mean_downsample(decoded.frame, factor);
    geometries[k] = coarse.geometry();
    write_frame(coarse, out_dir / all[k]->path, decoded.dtype);
  });
  if (!geometries.empty()) {
    out.geometry = geometries.front();
  } else if (manifest.geometry) {
    // No frames: derive the coarse geometry from a placeholder frame.
    Tensor3 zeros(Shape3{manifest.catalog->size(), manifest.geometry->rows(), manifest.geometry->cols()});
    out.geometry = block_mean_downsample(FieldFrame(make_time(2000, 1, 1), zeros, manifest.catalog, manifest.geometry), factor).geometry();
  }
  save_manifest(out, out_dir / "manifest.json");
  return out;
}

}  // namespace regbench
