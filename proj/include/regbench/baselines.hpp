#pragma once

#include <algorithm>
#include <compare>
#include <cstdio>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "regbench/dataset.hpp"

namespace regbench {

/// Calendar slot (month, day, hour-of-day). Feb 29 is its own slot.
struct ClimatologyKey {
  unsigned month = 1;
  unsigned day = 1;
  int hour = 0;

  static ClimatologyKey of(Timestamp t) {
    const auto c = civil(t);
    return {c.month, c.day, c.hour};
  }
  /// "MM-DD-HH"
  std::string label() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02u-%02u-%02d", month, day, hour);
    return buf;
  }
  static ClimatologyKey parse(const std::string& label) {
    ClimatologyKey k;
    if (std::sscanf(label.c_str(), "%u-%u-%d", &k.month, &k.day, &k.hour) != 3) {
      throw Error(ErrorKind::FormatError, "bad climatology key '" + label + "'");
    }
    return k;
  }
  auto operator<=>(const ClimatologyKey&) const = default;
};

class ClimatologyTable {
 public:
  struct Entry {
    Tensor3 mean;
    std::size_t count = 0;
  };

  ClimatologyTable(CatalogPtr catalog, GeometryPtr geometry, std::string source_split, std::map<ClimatologyKey, Entry> entries)
      : catalog_(std::move(catalog)), geometry_(std::move(geometry)), source_(std::move(source_split)), entries_(std::move(entries)) {}

  const CatalogPtr& catalog() const { return catalog_; }
  const GeometryPtr& geometry() const { return geometry_; }
  const std::string& source_split() const { return source_; }
  const std::map<ClimatologyKey, Entry>& entries() const { return entries_; }
  bool contains(ClimatologyKey k) const { return entries_.count(k) != 0; }

  const Entry& at(ClimatologyKey k) const {
    auto it = entries_.find(k);
    if (it == entries_.end()) throw Error(ErrorKind::MissingClimatologyKey, "no climatology for " + k.label());
    return it->second;
  }

 private:
  CatalogPtr catalog_;
  GeometryPtr geometry_;
  std::string source_;
  std::map<ClimatologyKey, Entry> entries_;
};

namespace detail {
/// Sums a key's frames in timestamp order so the result does not depend on
/// the order frames were supplied in.
template <typename Load>
ClimatologyTable::Entry mean_of(std::vector<Timestamp> times, Load&& load, const CatalogPtr& catalog, const GeometryPtr& geometry) {
  std::sort(times.begin(), times.end());
  Tensor3 sum(Shape3{catalog->size(), geometry->rows(), geometry->cols()});
  for (Timestamp t : times) {
    const FieldFrame f = load(t);
    if (!(*f.catalog() == *catalog) || !(*f.geometry() == *geometry)) {
      throw Error(ErrorKind::CatalogMismatch, "frame at " + format_iso(t) + " differs from the climatology grid");
    }
    sum += f.values();
  }
  sum *= 1.0 / double(times.size());
  return {std::move(sum), times.size()};
}
}  // namespace detail

/// Mean over all frames sharing each (month, day, hour) slot.
inline ClimatologyTable fit_climatology(std::span<const FieldFrame> frames, std::string source_split = "train") {
  if (frames.empty()) throw Error(ErrorKind::EmptySplit, "no frames to fit a climatology on");
  std::map<Timestamp, const FieldFrame*> by_time;
  std::map<ClimatologyKey, std::vector<Timestamp>> groups;
  for (const auto& f : frames) {
    if (!by_time.emplace(f.time(), &f).second) throw Error(ErrorKind::DuplicateTimestamp, format_iso(f.time()));
    groups[ClimatologyKey::of(f.time())].push_back(f.time());
  }
  const auto& catalog = frames.front().catalog();
  const auto& geometry = frames.front().geometry();
  std::map<ClimatologyKey, ClimatologyTable::Entry> entries;
  for (auto& [key, times] : groups) {
    entries.emplace(key, detail::mean_of(times, [&](Timestamp t) { return *by_time.at(t); }, catalog, geometry));
  }
  return ClimatologyTable(catalog, geometry, std::move(source_split), std::move(entries));
}

inline ClimatologyTable fit_climatology(const DatasetManifest& manifest, const std::string& split = "train",
                                        std::size_t workers = 1) {
  const auto& list = manifest.split(split);
  if (list.empty()) throw Error(ErrorKind::EmptySplit, "split '" + split + "' is empty");
  std::map<Timestamp, fs::path> paths;
  std::map<ClimatologyKey, std::vector<Timestamp>> groups;
  for (const auto& e : list) {
    paths[e.time] = manifest.resolve(e);
    groups[ClimatologyKey::of(e.time)].push_back(e.time);
  }
  std::vector<std::pair<ClimatologyKey, std::vector<Timestamp>>> work(groups.begin(), groups.end());
  std::vector<ClimatologyTable::Entry> results(work.size());
  parallel_for(work.size(), workers, [&](std::size_t k) {
    results[k] = detail::mean_of(work[k].second, [&](Timestamp t) { return read_frame(paths.at(t)); }, manifest.catalog,
                                 manifest.geometry);
  });
  std::map<ClimatologyKey, ClimatologyTable::Entry> entries;
  for (std::size_t k = 0; k < work.size(); ++k) entries.emplace(work[k].first, std::move(results[k]));
  return ClimatologyTable(manifest.catalog, manifest.geometry, split, std::move(entries));
}

inline FieldFrame climatology_forecast(const ClimatologyTable& table, Timestamp t) {
  return FieldFrame(t, table.at(ClimatologyKey::of(t)).mean, table.catalog(), table.geometry());
}

/// Initial state re-stamped `lead_steps` six-hour steps later.
inline FieldFrame persistence_forecast(const FieldFrame& initial, std::size_t lead_steps) {
  return initial.with_time(initial.time() + kStep * long(lead_steps));
}

// Directory layout: one RBF1 frame per slot named "MM-DD-HH.rbf" (stamped in
// the leap year 2000 so Feb 29 is representable) plus index.json.

inline void save_climatology(const ClimatologyTable& table, const fs::path& dir, DType dtype = DType::Float64) {
  fs::create_directories(dir);
  json index;
  index["source_split"] = table.source_split();
  index["catalog"] = catalog_to_json(*table.catalog());
  json list = json::array();
  for (const auto& [key, entry] : table.entries()) {
    const std::string file = key.label() + ".rbf";
    const FieldFrame f(make_time(2000, key.month, key.day, key.hour), entry.mean, table.catalog(), table.geometry());
    write_frame(f, dir / file, dtype);
    list.push_back({{"key", key.label()}, {"count", entry.count}, {"file", file}});
  }
  index["entries"] = std::move(list);
  write_text_atomic(dir / "index.json", index.dump(1) + "\n");
}

inline ClimatologyTable load_climatology(const fs::path& dir) {
  if (!fs::exists(dir / "index.json")) throw Error(ErrorKind::IoError, "no climatology index in " + dir.string());
  const auto bytes = read_file_bytes(dir / "index.json");
  json index;
  try {
    index = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("climatology index: ") + e.what());
  }
  CatalogPtr catalog;
  GeometryPtr geometry;
  std::map<ClimatologyKey, ClimatologyTable::Entry> entries;
  for (const auto& e : index.at("entries")) {
    auto frame = read_frame(dir / e.at("file").get<std::string>());
    if (!catalog) {
      catalog = frame.catalog();
      geometry = frame.geometry();
    }
    entries.emplace(ClimatologyKey::parse(e.at("key").get<std::string>()),
                    ClimatologyTable::Entry{frame.values(), e.at("count").get<std::size_t>()});
  }
  if (!catalog) throw Error(ErrorKind::EmptySplit, "climatology " + dir.string() + " has no entries");
  return ClimatologyTable(catalog, geometry, index.value("source_split", std::string("train")), std::move(entries));
}

}  // namespace regbench
