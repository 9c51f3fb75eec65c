#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "regbench/grid.hpp"

namespace regbench {

enum class ConditioningMode : std::uint8_t { BoundaryForcing = 1, CoarseConditioning = 2 };

inline std::string to_string(ConditioningMode m) {
  return m == ConditioningMode::BoundaryForcing ? "boundary_forcing" : "coarse_conditioning";
}

inline ConditioningMode parse_conditioning_mode(const std::string& s) {
  if (s == "boundary_forcing") return ConditioningMode::BoundaryForcing;
  if (s == "coarse_conditioning") return ConditioningMode::CoarseConditioning;
  throw Error(ErrorKind::InvalidConfig, "unknown conditioning mode '" + s + "'");
}

inline constexpr std::size_t kDefaultHaloWidth = 10;
inline const std::string kCoarsePrefix = "coarse:";

struct BoundarySpec {
  ConditioningMode mode = ConditioningMode::BoundaryForcing;
  /// Ring width in cells; used under boundary forcing.
  std::size_t halo_width = kDefaultHaloWidth;
  /// Grid of the coarse analysis; used under coarse conditioning.
  GeometryPtr coarse_geometry;
  bool allow_full_overwrite = false;

  void validate(const GridGeometry& regional) const {
    if (mode == ConditioningMode::BoundaryForcing) {
      const std::size_t shortest = std::min(regional.rows(), regional.cols());
      if (!allow_full_overwrite && 2 * halo_width >= shortest) {
        throw Error(ErrorKind::InvalidConfig, "halo width " + std::to_string(halo_width) + " leaves no interior on a " +
                                                  std::to_string(regional.rows()) + "x" + std::to_string(regional.cols()) +
                                                  " grid");
      }
    } else if (coarse_geometry) {
      const auto& c = *coarse_geometry;
      if (c.lat_min() > regional.lat_min() || c.lat_max() < regional.lat_max() || c.lon_min() > regional.lon_min() ||
          c.lon_max() < regional.lon_max()) {
        throw Error(ErrorKind::InvalidConfig, "coarse grid does not cover the regional domain");
      }
    }
  }
};

inline bool in_ring(std::size_t i, std::size_t j, std::size_t rows, std::size_t cols, std::size_t halo) {
  return i < halo || j < halo || i + halo >= rows || j + halo >= cols;
}

/// `truth` on the outer ring of width `halo`, `state` strictly inside it.
inline FieldFrame apply_boundary_forcing(const FieldFrame& state, const FieldFrame& truth, std::size_t halo) {
  require_compatible(state, truth, ErrorKind::CatalogMismatch, "boundary forcing");
  if (state.time() != truth.time()) {
    throw Error(ErrorKind::CatalogMismatch, "boundary forcing state at " + format_iso(state.time()) + " but truth at " +
                                                format_iso(truth.time()));
  }
  if (halo == 0) return state;
  const auto& s = state.shape();
  Tensor3 out = state.values();
  for (std::size_t v = 0; v < s.channels; ++v) {
    for (std::size_t i = 0; i < s.rows; ++i) {
      for (std::size_t j = 0; j < s.cols; ++j) {
        if (in_ring(i, j, s.rows, s.cols, halo)) out(v, i, j) = truth(v, i, j);
      }
    }
  }
  return state.with_values(std::move(out));
}

/// Rows and columns strictly inside a ring of width `halo`.
inline std::pair<IndexRange, IndexRange> interior_ranges(std::size_t rows, std::size_t cols, std::size_t halo) {
  if (2 * halo >= rows || 2 * halo >= cols) throw Error(ErrorKind::InvalidConfig, "halo leaves no interior");
  return {IndexRange{halo, rows - halo}, IndexRange{halo, cols - halo}};
}

namespace detail {

inline constexpr double kCoordSlack = 1e-9;

/// Index range along a monotonic axis whose span covers [lo, hi].
inline IndexRange covering_range(const std::vector<double>& axis, double lo, double hi, const char* what) {
  const double amin = std::min(axis.front(), axis.back()), amax = std::max(axis.front(), axis.back());
  if (lo < amin - kCoordSlack || hi > amax + kCoordSlack) {
    throw Error(ErrorKind::RegionNotCovered, std::string(what) + " [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                                 "] outside [" + std::to_string(amin) + ", " + std::to_string(amax) + "]");
  }
  const std::size_t n = axis.size();
  const bool ascending = n < 2 || axis[1] > axis[0];
  std::size_t first = 0, last = n - 1;
  if (ascending) {
    for (std::size_t k = 0; k < n; ++k) if (axis[k] <= lo + kCoordSlack) first = k;
    for (std::size_t k = n; k-- > 0;) if (axis[k] >= hi - kCoordSlack) last = k;
  } else {
    for (std::size_t k = 0; k < n; ++k) if (axis[k] >= hi - kCoordSlack) first = k;
    for (std::size_t k = n; k-- > 0;) if (axis[k] <= lo + kCoordSlack) last = k;
  }
  return {first, last + 1};
}

struct Bracket {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double t = 0.0;
};

/// Neighbours of x on a monotonic axis; outside the axis hull it clamps to the edge.
inline Bracket locate(const std::vector<double>& axis, double x) {
  const std::size_t n = axis.size();
  const bool ascending = axis[1] > axis[0];
  const auto before = [&](double a, double b) { return ascending ? a < b : a > b; };
  if (!before(axis.front(), x)) return {0, 0, 0.0};
  if (!before(x, axis.back())) return {n - 1, n - 1, 0.0};
  std::size_t k = 0;
  while (k + 1 < n && !before(x, axis[k + 1])) ++k;
  if (k + 1 == n) return {n - 1, n - 1, 0.0};
  return {k, k + 1, (x - axis[k]) / (axis[k + 1] - axis[k])};
}

}  // namespace detail

/// Smallest sub-grid of `global` whose cell-center extent covers `region`.
inline FieldFrame crop_to_region(const FieldFrame& global, const GridGeometry& region) {
  const auto& g = *global.geometry();
  const auto rows = detail::covering_range(g.lat(), region.lat_min(), region.lat_max(), "latitude");
  const auto cols = detail::covering_range(g.lon(), region.lon_min(), region.lon_max(), "longitude");
  return subgrid_view(global, rows, cols);
}

/// Bilinear interpolation in physical (lat, lon) onto `target`, per channel.
inline FieldFrame bilinear_upsample(const FieldFrame& coarse, const GeometryPtr& target) {
  const auto& g = *coarse.geometry();
  if (g.rows() < 2 || g.cols() < 2) throw Error(ErrorKind::InvalidConfig, "bilinear interpolation needs a 2x2 source grid");
  std::vector<detail::Bracket> by_row, by_col;
  for (double lat : target->lat()) by_row.push_back(detail::locate(g.lat(), lat));
  for (double lon : target->lon()) by_col.push_back(detail::locate(g.lon(), lon));

  Tensor3 out(Shape3{coarse.shape().channels, target->rows(), target->cols()});
  for (std::size_t v = 0; v < coarse.shape().channels; ++v) {
    for (std::size_t i = 0; i < target->rows(); ++i) {
      const auto& r = by_row[i];
      for (std::size_t j = 0; j < target->cols(); ++j) {
        const auto& c = by_col[j];
        const double south = (1.0 - c.t) * coarse(v, r.lo, c.lo) + c.t * coarse(v, r.lo, c.hi);
        const double north = (1.0 - c.t) * coarse(v, r.hi, c.lo) + c.t * coarse(v, r.hi, c.hi);
        out(v, i, j) = (1.0 - r.t) * south + r.t * north;
      }
    }
  }
  return FieldFrame(coarse.time(), std::move(out), coarse.catalog(), target);
}

/// Channels [0, V) from `regional`, [V, 2V) from `upsampled_coarse` renamed with a "coarse:" prefix.
inline FieldFrame concat_conditioning(const FieldFrame& regional, const FieldFrame& upsampled_coarse) {
  if (regional.shape() != upsampled_coarse.shape() || !(*regional.geometry() == *upsampled_coarse.geometry())) {
    throw Error(ErrorKind::ShapeError, "conditioning inputs differ in shape: " + to_string(regional.shape()) + " vs " +
                                           to_string(upsampled_coarse.shape()));
  }
  if (channel_names(*regional.catalog()) != channel_names(*upsampled_coarse.catalog())) {
    throw Error(ErrorKind::CatalogMismatch, "conditioning inputs use different channel orders");
  }
  if (regional.time() != upsampled_coarse.time()) {
    throw Error(ErrorKind::CatalogMismatch, "conditioning inputs have different timestamps");
  }
  auto channels = regional.catalog()->channels();
  for (const auto& c : regional.catalog()->channels()) channels.push_back({kCoarsePrefix + c.name, c.level_hpa, c.units});
  const auto& s = regional.shape();
  std::vector<double> values(regional.values().data().begin(), regional.values().data().end());
  values.insert(values.end(), upsampled_coarse.values().data().begin(), upsampled_coarse.values().data().end());
  return FieldFrame(regional.time(), Tensor3(Shape3{2 * s.channels, s.rows, s.cols}, std::move(values)),
                    std::make_shared<const VariableCatalog>(std::move(channels)), regional.geometry());
}

/// Inverse of concat_conditioning.
inline std::pair<FieldFrame, FieldFrame> split_conditioning(const FieldFrame& stacked) {
  const auto& s = stacked.shape();
  if (s.channels % 2 != 0) throw Error(ErrorKind::ShapeError, "stacked input has an odd channel count");
  const std::size_t half = s.channels / 2;
  std::vector<std::string> first, second;
  for (std::size_t v = 0; v < half; ++v) {
    first.push_back((*stacked.catalog())[v].name);
    second.push_back((*stacked.catalog())[half + v].name);
  }
  const IndexRange rows{0, s.rows}, cols{0, s.cols};
  const auto regional = subgrid_view(stacked, rows, cols, first);
  const auto coarse_named = subgrid_view(stacked, rows, cols, second);
  std::vector<Channel> plain;
  for (const auto& c : coarse_named.catalog()->channels()) {
    if (c.name.rfind(kCoarsePrefix, 0) != 0) throw Error(ErrorKind::UnknownChannel, "expected 'coarse:' channel, got " + c.name);
    plain.push_back({c.name.substr(kCoarsePrefix.size()), c.level_hpa, c.units});
  }
  auto coarse = FieldFrame(stacked.time(), coarse_named.values(), std::make_shared<const VariableCatalog>(std::move(plain)),
                           stacked.geometry());
  return {regional, coarse};
}

/// Coarse truth prepared for a regional grid: cropped to the part of the
/// regional extent it covers, then interpolated onto the regional cells.
inline FieldFrame coarse_on_regional_grid(const FieldFrame& coarse, const GeometryPtr& regional) {
  const auto& c = *coarse.geometry();
  const double lat_lo = std::max(regional->lat_min(), c.lat_min()), lat_hi = std::min(regional->lat_max(), c.lat_max());
  const double lon_lo = std::max(regional->lon_min(), c.lon_min()), lon_hi = std::min(regional->lon_max(), c.lon_max());
  if (lat_lo > lat_hi || lon_lo > lon_hi) throw Error(ErrorKind::RegionNotCovered, "coarse grid misses the regional domain");
  const GridGeometry box(lat_lo == lat_hi ? std::vector<double>{lat_lo} : std::vector<double>{lat_lo, lat_hi},
                         lon_lo == lon_hi ? std::vector<double>{lon_lo} : std::vector<double>{lon_lo, lon_hi}, 0.0);
  auto cropped = crop_to_region(coarse, box);
  if (cropped.shape().rows < 2 || cropped.shape().cols < 2) cropped = coarse;
  return bilinear_upsample(cropped, regional);
}

}  // namespace regbench
