#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "regbench/error.hpp"
#include "regbench/time.hpp"

namespace regbench {

// ---------------------------------------------------------------------------
// Dense V x H x W storage
// ---------------------------------------------------------------------------

struct Shape3 {
  std::size_t channels = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t plane() const { return rows * cols; }
  std::size_t size() const { return channels * rows * cols; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

/// Channel-major, row-major array of 64-bit reals. A plain value type; the
/// immutable, metadata-carrying wrapper is FieldFrame.
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(Shape3 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Tensor3(Shape3 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw Error(ErrorKind::ShapeError, "tensor of shape " + regbench::to_string(shape_) + " given " +
                                             std::to_string(data_.size()) + " values");
    }
  }

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t v, std::size_t i, std::size_t j) { return data_[index(v, i, j)]; }
  double operator()(std::size_t v, std::size_t i, std::size_t j) const { return data_[index(v, i, j)]; }
  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> channel(std::size_t v) { return std::span<double>(data_).subspan(v * shape_.plane(), shape_.plane()); }
  std::span<const double> channel(std::size_t v) const {
    return std::span<const double>(data_).subspan(v * shape_.plane(), shape_.plane());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  Tensor3& operator+=(const Tensor3& other) {
    require_same_shape(other);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
    return *this;
  }
  Tensor3& operator-=(const Tensor3& other) {
    require_same_shape(other);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
    return *this;
  }
  Tensor3& operator*=(double s) {
    for (auto& x : data_) x *= s;
    return *this;
  }
  friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
  friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
  friend Tensor3 operator*(Tensor3 a, double s) { return a *= s; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t index(std::size_t v, std::size_t i, std::size_t j) const { return (v * shape_.rows + i) * shape_.cols + j; }
  void require_same_shape(const Tensor3& other) const {
    if (other.shape_ != shape_) {
      throw Error(ErrorKind::ShapeError,
                  "shape " + regbench::to_string(shape_) + " vs " + regbench::to_string(other.shape_));
    }
  }

  Shape3 shape_{};
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Variable catalog
// ---------------------------------------------------------------------------

inline constexpr std::array<int, 7> kPressureLevelsHpa{50, 250, 500, 600, 700, 850, 925};

struct Channel {
  std::string name;
  /// Pressure level in hPa; empty for surface and static fields.
  std::optional<int> level_hpa;
  std::string units;

  friend bool operator==(const Channel&, const Channel&) = default;
};

class VariableCatalog {
 public:
  VariableCatalog() = default;
  explicit VariableCatalog(std::vector<Channel> channels) : channels_(std::move(channels)) {
    std::unordered_set<std::string> seen;
    for (const auto& c : channels_) {
      if (c.name.empty()) throw Error(ErrorKind::InvalidConfig, "empty channel name");
      if (!seen.insert(c.name).second) throw Error(ErrorKind::InvalidConfig, "duplicate channel '" + c.name + "'");
      if (c.level_hpa &&
          std::find(kPressureLevelsHpa.begin(), kPressureLevelsHpa.end(), *c.level_hpa) == kPressureLevelsHpa.end()) {
        throw Error(ErrorKind::InvalidConfig,
                    "channel '" + c.name + "' has unsupported pressure level " + std::to_string(*c.level_hpa));
      }
    }
  }

  std::size_t size() const { return channels_.size(); }
  const Channel& operator[](std::size_t v) const { return channels_[v]; }
  const std::vector<Channel>& channels() const { return channels_; }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t v = 0; v < channels_.size(); ++v) {
      if (channels_[v].name == name) return v;
    }
    return std::nullopt;
  }
  std::size_t index_of(const std::string& name) const {
    if (auto v = find(name)) return *v;
    throw Error(ErrorKind::UnknownChannel, "no channel named '" + name + "'");
  }

  friend bool operator==(const VariableCatalog&, const VariableCatalog&) = default;

 private:
  std::vector<Channel> channels_;
};

using CatalogPtr = std::shared_ptr<const VariableCatalog>;

/// The 43-channel curated variable set: six single-level variables, five
/// pressure-level variables at seven levels, two static fields.
inline VariableCatalog curated_catalog() {
  std::vector<Channel> ch{
      {"TMP", std::nullopt, "K"},       {"UGRD", std::nullopt, "m s-1"}, {"VGRD", std::nullopt, "m s-1"},
      {"APCP", std::nullopt, "kg m-2"}, {"PRMSL", std::nullopt, "Pa"},   {"TCDCRO", std::nullopt, "%"},
  };
  const std::array<std::pair<const char*, const char*>, 5> upper{
      {{"TMP_prl", "K"}, {"HGT", "gpm"}, {"UGRD_prl", "m s-1"}, {"VGRD_prl", "m s-1"}, {"RH", "%"}}};
  for (const auto& [name, units] : upper) {
    for (int level : kPressureLevelsHpa) {
      ch.push_back({std::string(name) + "_" + std::to_string(level), level, units});
    }
  }
  ch.push_back({"MTERH", std::nullopt, "m"});
  ch.push_back({"LAND", std::nullopt, "1"});
  return VariableCatalog(std::move(ch));
}

// ---------------------------------------------------------------------------
// Geometry and latitude weights
// ---------------------------------------------------------------------------

namespace detail {
inline bool strictly_monotonic(std::span<const double> a) {
  if (a.size() < 2) return true;
  const bool up = a[1] > a[0];
  for (std::size_t k = 1; k < a.size(); ++k) {
    if (up ? !(a[k] > a[k - 1]) : !(a[k] < a[k - 1])) return false;
  }
  return true;
}
}  // namespace detail

/// Cell-center latitudes and longitudes in degrees.
class GridGeometry {
 public:
  GridGeometry() = default;
  GridGeometry(std::vector<double> lat, std::vector<double> lon, double resolution_deg)
      : lat_(std::move(lat)), lon_(std::move(lon)), resolution_deg_(resolution_deg) {
    if (lat_.empty() || lon_.empty()) throw Error(ErrorKind::InvalidGeometry, "grid needs at least one row and column");
    for (double x : lat_) {
      if (!std::isfinite(x) || std::abs(x) >= 90.0) {
        throw Error(ErrorKind::InvalidGeometry, "latitude " + std::to_string(x) + " outside (-90, 90)");
      }
    }
    for (double x : lon_) {
      if (!std::isfinite(x)) throw Error(ErrorKind::InvalidGeometry, "non-finite longitude");
    }
    if (!detail::strictly_monotonic(lat_)) throw Error(ErrorKind::InvalidGeometry, "latitudes not strictly monotonic");
    if (!detail::strictly_monotonic(lon_)) throw Error(ErrorKind::InvalidGeometry, "longitudes not strictly monotonic");
  }

  /// Regular grid starting at (lat0, lon0) with the given spacing.
  static GridGeometry regular(double lat0, double lon0, double step_deg, std::size_t rows, std::size_t cols) {
    std::vector<double> lat(rows), lon(cols);
    for (std::size_t i = 0; i < rows; ++i) lat[i] = lat0 + step_deg * double(i);
    for (std::size_t j = 0; j < cols; ++j) lon[j] = lon0 + step_deg * double(j);
    return GridGeometry(std::move(lat), std::move(lon), step_deg);
  }

  std::size_t rows() const { return lat_.size(); }
  std::size_t cols() const { return lon_.size(); }
  const std::vector<double>& lat() const { return lat_; }
  const std::vector<double>& lon() const { return lon_; }
  double resolution_deg() const { return resolution_deg_; }

  double lat_min() const { return std::min(lat_.front(), lat_.back()); }
  double lat_max() const { return std::max(lat_.front(), lat_.back()); }
  double lon_min() const { return std::min(lon_.front(), lon_.back()); }
  double lon_max() const { return std::max(lon_.front(), lon_.back()); }

  friend bool operator==(const GridGeometry& a, const GridGeometry& b) { return a.lat_ == b.lat_ && a.lon_ == b.lon_; }

 private:
  std::vector<double> lat_;
  std::vector<double> lon_;
  double resolution_deg_ = 0.0;
};

using GeometryPtr = std::shared_ptr<const GridGeometry>;

/// Per-row weights proportional to cos(latitude), normalized to mean one.
class LatWeights {
 public:
  LatWeights() = default;
  explicit LatWeights(std::vector<double> w) : w_(std::move(w)) {
    for (double x : w_) {
      if (!(x > 0.0) || !std::isfinite(x)) throw Error(ErrorKind::InvalidGeometry, "latitude weight must be positive");
    }
  }
  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  std::span<const double> values() const { return w_; }

 private:
  std::vector<double> w_;
};

inline LatWeights latitude_weights(std::span<const double> lat_deg) {
  if (lat_deg.empty()) throw Error(ErrorKind::InvalidGeometry, "no latitude rows");
  std::vector<double> w(lat_deg.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(std::abs(lat_deg[i]) < 90.0)) {
      throw Error(ErrorKind::InvalidGeometry, "latitude " + std::to_string(lat_deg[i]) + " outside (-90, 90)");
    }
    w[i] = std::cos(lat_deg[i] * std::numbers::pi / 180.0);
    total += w[i];
  }
  const double mean = total / double(w.size());
  for (auto& x : w) x /= mean;
  return LatWeights(std::move(w));
}

inline LatWeights latitude_weights(const GridGeometry& geometry) { return latitude_weights(geometry.lat()); }

/// (1 / (H W)) * sum_ij w_i f_ij over one H x W plane.
inline double weighted_area_mean(std::span<const double> field, std::size_t rows, std::size_t cols,
                                 const LatWeights& weights) {
  if (field.size() != rows * cols || weights.size() != rows || rows == 0 || cols == 0) {
    throw Error(ErrorKind::ShapeError, "field of " + std::to_string(field.size()) + " values against " +
                                           std::to_string(weights.size()) + " weight rows and " +
                                           std::to_string(cols) + " columns");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < cols; ++j) row += field[i * cols + j];
    total += weights[i] * row;
  }
  return total / double(rows * cols);
}

// ---------------------------------------------------------------------------
// FieldFrame
// ---------------------------------------------------------------------------

/// One timestamped V x H x W atmospheric state. Immutable once built; every
/// transform returns a new frame.
class FieldFrame {
 public:
  FieldFrame(Timestamp time, Tensor3 values, CatalogPtr catalog, GeometryPtr geometry)
      : time_(time), values_(std::move(values)), catalog_(std::move(catalog)), geometry_(std::move(geometry)) {
    if (!catalog_ || !geometry_) throw Error(ErrorKind::InvalidFrame, "frame needs a catalog and a geometry");
    const Shape3 expected{catalog_->size(), geometry_->rows(), geometry_->cols()};
    if (values_.shape() != expected) {
      throw Error(ErrorKind::ShapeError,
                  "values " + to_string(values_.shape()) + " do not match catalog/geometry " + to_string(expected));
    }
    if (!values_.all_finite()) throw Error(ErrorKind::InvalidFrame, "non-finite value in frame at " + format_iso(time_));
    if (!is_step_aligned(time_)) {
      throw Error(ErrorKind::InvalidFrame, "timestamp " + format_iso(time_) + " is not on a 6-hour boundary");
    }
  }

  Timestamp time() const { return time_; }
  const Tensor3& values() const { return values_; }
  const Shape3& shape() const { return values_.shape(); }
  const CatalogPtr& catalog() const { return catalog_; }
  const GeometryPtr& geometry() const { return geometry_; }

  double operator()(std::size_t v, std::size_t i, std::size_t j) const { return values_(v, i, j); }
  std::span<const double> channel(std::size_t v) const { return values_.channel(v); }

  FieldFrame with_time(Timestamp t) const { return FieldFrame(t, values_, catalog_, geometry_); }
  FieldFrame with_values(Tensor3 values) const { return FieldFrame(time_, std::move(values), catalog_, geometry_); }

  /// Same catalog (by value) and same geometry (by coordinates).
  bool compatible_with(const FieldFrame& other) const {
    return shape() == other.shape() && (catalog_ == other.catalog_ || *catalog_ == *other.catalog_) &&
           (geometry_ == other.geometry_ || *geometry_ == *other.geometry_);
  }

  friend bool operator==(const FieldFrame& a, const FieldFrame& b) {
    return a.time_ == b.time_ && a.values_ == b.values_ && a.compatible_with(b);
  }

 private:
  Timestamp time_;
  Tensor3 values_;
  CatalogPtr catalog_;
  GeometryPtr geometry_;
};

inline void require_compatible(const FieldFrame& a, const FieldFrame& b, ErrorKind kind, const char* what) {
  if (!a.compatible_with(b)) {
    throw Error(kind, std::string(what) + ": frames differ in catalog or geometry (" + to_string(a.shape()) + " vs " +
                          to_string(b.shape()) + ")");
  }
}

/// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Extracts rows x cols x channels. The sliced catalog follows the order of `channels`.
inline FieldFrame subgrid_view(const FieldFrame& frame, IndexRange rows, IndexRange cols,
                               const std::vector<std::string>& channels) {
  const auto& g = *frame.geometry();
  if (rows.begin >= rows.end || rows.end > g.rows() || cols.begin >= cols.end || cols.end > g.cols()) {
    throw Error(ErrorKind::ShapeError, "sub-grid rows [" + std::to_string(rows.begin) + "," + std::to_string(rows.end) +
                                           ") cols [" + std::to_string(cols.begin) + "," + std::to_string(cols.end) +
                                           ") outside " + std::to_string(g.rows()) + "x" + std::to_string(g.cols()));
  }
  if (channels.empty()) throw Error(ErrorKind::UnknownChannel, "empty channel subset");

  std::vector<std::size_t> src;
  std::vector<Channel> picked;
  for (const auto& name : channels) {
    const std::size_t v = frame.catalog()->index_of(name);
    src.push_back(v);
    picked.push_back((*frame.catalog())[v]);
  }

  const bool full = rows.begin == 0 && rows.end == g.rows() && cols.begin == 0 && cols.end == g.cols();
  const bool same_channels = picked == frame.catalog()->channels();
  if (full && same_channels) return frame;

  CatalogPtr catalog = same_channels ? frame.catalog() : std::make_shared<const VariableCatalog>(std::move(picked));
  GeometryPtr geometry = full ? frame.geometry()
                              : std::make_shared<const GridGeometry>(
                                    std::vector<double>(g.lat().begin() + long(rows.begin), g.lat().begin() + long(rows.end)),
                                    std::vector<double>(g.lon().begin() + long(cols.begin), g.lon().begin() + long(cols.end)),
                                    g.resolution_deg());

  Tensor3 out(Shape3{src.size(), rows.size(), cols.size()});
  for (std::size_t k = 0; k < src.size(); ++k) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < cols.size(); ++j) out(k, i, j) = frame(src[k], rows.begin + i, cols.begin + j);
    }
  }
  return FieldFrame(frame.time(), std::move(out), std::move(catalog), std::move(geometry));
}

inline std::vector<std::string> channel_names(const VariableCatalog& catalog) {
  std::vector<std::string> names;
  for (const auto& c : catalog.channels()) names.push_back(c.name);
  return names;
}

/// Spatial slice over all channels.
inline FieldFrame subgrid_view(const FieldFrame& frame, IndexRange rows, IndexRange cols) {
  return subgrid_view(frame, rows, cols, channel_names(*frame.catalog()));
}

}  // namespace regbench
