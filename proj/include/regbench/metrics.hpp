#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "regbench/grid.hpp"

namespace regbench {

namespace detail {

inline void require_same_grid(const FieldFrame& a, const FieldFrame& b, const char* what) {
  if (!a.compatible_with(b)) {
    throw Error(ErrorKind::ShapeError, std::string(what) + ": frames differ in shape, catalog or grid (" +
                                           to_string(a.shape()) + " vs " + to_string(b.shape()) + ")");
  }
}

inline void require_weights(const Shape3& s, const LatWeights& w) {
  if (w.size() != s.rows) {
    throw Error(ErrorKind::ShapeError, "latitude weights for " + std::to_string(w.size()) + " rows, grid has " +
                                           std::to_string(s.rows));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Deterministic scores
// ---------------------------------------------------------------------------

/// Per channel: sqrt(weighted_area_mean((f - x)^2)).
inline std::vector<double> rmse(const Tensor3& forecast, const Tensor3& truth, const LatWeights& weights) {
  if (forecast.shape() != truth.shape()) {
    throw Error(ErrorKind::ShapeError, "rmse: " + to_string(forecast.shape()) + " vs " + to_string(truth.shape()));
  }
  const auto& s = forecast.shape();
  detail::require_weights(s, weights);
  std::vector<double> out(s.channels), sq(s.plane());
  for (std::size_t v = 0; v < s.channels; ++v) {
    const auto f = forecast.channel(v), x = truth.channel(v);
    for (std::size_t k = 0; k < sq.size(); ++k) sq[k] = (f[k] - x[k]) * (f[k] - x[k]);
    out[v] = std::sqrt(weighted_area_mean(sq, s.rows, s.cols, weights));
  }
  return out;
}

inline std::vector<double> rmse(const FieldFrame& forecast, const FieldFrame& truth, const LatWeights& weights) {
  detail::require_same_grid(forecast, truth, "rmse");
  return rmse(forecast.values(), truth.values(), weights);
}

/// Per channel anomaly correlation; nullopt where either anomaly has zero norm.
inline std::vector<std::optional<double>> acc_per_channel(const Tensor3& forecast, const Tensor3& truth,
                                                          const Tensor3& climatology, const LatWeights& weights) {
  if (forecast.shape() != truth.shape() || forecast.shape() != climatology.shape()) {
    throw Error(ErrorKind::ShapeError, "acc: forecast, truth and climatology shapes differ");
  }
  const auto& s = forecast.shape();
  detail::require_weights(s, weights);
  std::vector<std::optional<double>> out(s.channels);
  for (std::size_t v = 0; v < s.channels; ++v) {
    const auto f = forecast.channel(v), x = truth.channel(v), c = climatology.channel(v);
    double fx = 0.0, ff = 0.0, xx = 0.0;
    for (std::size_t i = 0; i < s.rows; ++i) {
      const double w = weights[i];
      for (std::size_t j = 0; j < s.cols; ++j) {
        const std::size_t k = i * s.cols + j;
        const double fa = f[k] - c[k], xa = x[k] - c[k];
        fx += w * fa * xa;
        ff += w * fa * fa;
        xx += w * xa * xa;
      }
    }
    if (ff > 0.0 && xx > 0.0) out[v] = std::clamp(fx / std::sqrt(ff * xx), -1.0, 1.0);
  }
  return out;
}

/// Per channel sum(L f' x') / sqrt(sum(L f'^2) sum(L x'^2)) with anomalies
/// taken against `climatology`.
inline std::vector<double> acc(const Tensor3& forecast, const Tensor3& truth, const Tensor3& climatology,
                               const LatWeights& weights) {
  const auto per = acc_per_channel(forecast, truth, climatology, weights);
  std::vector<double> out;
  for (std::size_t v = 0; v < per.size(); ++v) {
    if (!per[v]) throw Error(ErrorKind::DegenerateAnomaly, "zero anomaly norm in channel " + std::to_string(v));
    out.push_back(*per[v]);
  }
  return out;
}

inline std::vector<double> acc(const FieldFrame& forecast, const FieldFrame& truth, const FieldFrame& climatology,
                               const LatWeights& weights) {
  detail::require_same_grid(forecast, truth, "acc");
  detail::require_same_grid(forecast, climatology, "acc");
  return acc(forecast.values(), truth.values(), climatology.values(), weights);
}

// ---------------------------------------------------------------------------
// Ensemble scores
// ---------------------------------------------------------------------------

/// M members sharing timestamp, catalog and grid.
class EnsembleForecast {
 public:
  explicit EnsembleForecast(std::vector<FieldFrame> members) : members_(std::move(members)) {
    if (members_.empty()) throw Error(ErrorKind::InsufficientMembers, "ensemble needs at least one member");
    for (const auto& m : members_) {
      detail::require_same_grid(members_.front(), m, "ensemble");
      if (m.time() != members_.front().time()) throw Error(ErrorKind::ShapeError, "ensemble members differ in valid time");
    }
  }
  std::size_t size() const { return members_.size(); }
  const std::vector<FieldFrame>& members() const { return members_; }
  const FieldFrame& operator[](std::size_t m) const { return members_[m]; }
  Timestamp time() const { return members_.front().time(); }

  std::vector<Tensor3> tensors() const {
    std::vector<Tensor3> out;
    for (const auto& m : members_) out.push_back(m.values());
    return out;
  }

  FieldFrame mean() const {
    Tensor3 sum(members_.front().shape());
    for (const auto& m : members_) sum += m.values();
    sum *= 1.0 / double(members_.size());
    return members_.front().with_values(std::move(sum));
  }

 private:
  std::vector<FieldFrame> members_;
};

namespace detail {
inline void require_members(std::span<const Tensor3> members, const Shape3& shape, std::size_t min_members) {
  if (members.size() < min_members) {
    throw Error(ErrorKind::InsufficientMembers,
                "need at least " + std::to_string(min_members) + " members, got " + std::to_string(members.size()));
  }
  for (const auto& m : members) {
    if (m.shape() != shape) throw Error(ErrorKind::ShapeError, "member " + to_string(m.shape()) + " vs " + to_string(shape));
  }
}
}  // namespace detail

/// Per channel weighted_area_mean of the kernel score
/// (1/M) sum|x_m - y| - c sum_m sum_m' |x_m - x_m'|, with c = 1/(2M^2), or
/// 1/(2M(M-1)) for the fair estimator.
inline std::vector<double> crps(std::span<const Tensor3> members, const Tensor3& truth, const LatWeights& weights,
                                bool fair = false) {
  const auto& s = truth.shape();
  detail::require_members(members, s, 1);
  detail::require_weights(s, weights);
  const std::size_t m_count = members.size();
  if (fair && m_count < 2) throw Error(ErrorKind::InsufficientMembers, "the fair estimator needs two members");
  const double md = double(m_count);
  const double pair_scale = fair ? 1.0 / (2.0 * md * (md - 1.0)) : 1.0 / (2.0 * md * md);
  std::vector<double> out(s.channels), score(s.plane()), x(m_count);
  for (std::size_t v = 0; v < s.channels; ++v) {
    const auto y = truth.channel(v);
    for (std::size_t k = 0; k < score.size(); ++k) {
      double skill = 0.0;
      for (std::size_t m = 0; m < m_count; ++m) {
        x[m] = members[m].channel(v)[k];
        skill += std::abs(x[m] - y[k]);
      }
      std::sort(x.begin(), x.end());
      // sum_m sum_m' |x_m - x_m'| = 2 sum_r (2r - M + 1) x_(r)
      double pairs = 0.0;
      for (std::size_t r = 0; r < m_count; ++r) pairs += (2.0 * double(r) - md + 1.0) * x[r];
      score[k] = skill / md - pair_scale * 2.0 * pairs;
    }
    out[v] = weighted_area_mean(score, s.rows, s.cols, weights);
  }
  return out;
}

inline std::vector<double> crps(const EnsembleForecast& ensemble, const FieldFrame& truth, const LatWeights& weights,
                                bool fair = false) {
  detail::require_same_grid(ensemble[0], truth, "crps");
  return crps(ensemble.tensors(), truth.values(), weights, fair);
}

/// Per channel sqrt(weighted_area_mean(unbiased ensemble variance)).
inline std::vector<double> spread(std::span<const Tensor3> members, const LatWeights& weights) {
  if (members.size() < 2) throw Error(ErrorKind::InsufficientMembers, "spread needs at least two members");
  const auto& s = members.front().shape();
  detail::require_members(members, s, 2);
  detail::require_weights(s, weights);
  const double md = double(members.size());
  std::vector<double> out(s.channels), var(s.plane());
  for (std::size_t v = 0; v < s.channels; ++v) {
    for (std::size_t k = 0; k < var.size(); ++k) {
      double mean = 0.0;
      for (const auto& m : members) mean += m.channel(v)[k];
      mean /= md;
      double ss = 0.0;
      for (const auto& m : members) {
        const double d = m.channel(v)[k] - mean;
        ss += d * d;
      }
      var[k] = ss / (md - 1.0);
    }
    out[v] = std::sqrt(weighted_area_mean(var, s.rows, s.cols, weights));
  }
  return out;
}

inline std::vector<double> spread(const EnsembleForecast& ensemble, const LatWeights& weights) {
  return spread(ensemble.tensors(), weights);
}

inline Tensor3 ensemble_mean(std::span<const Tensor3> members) {
  Tensor3 sum(members.front().shape());
  for (const auto& m : members) sum += m;
  sum *= 1.0 / double(members.size());
  return sum;
}

/// Per channel spread / rmse(ensemble mean, truth); nullopt where that rmse is 0.
inline std::vector<std::optional<double>> ssr_per_channel(std::span<const Tensor3> members, const Tensor3& truth,
                                                          const LatWeights& weights) {
  const auto sp = spread(members, weights);
  const auto err = rmse(ensemble_mean(members), truth, weights);
  std::vector<std::optional<double>> out(sp.size());
  for (std::size_t v = 0; v < sp.size(); ++v) {
    if (err[v] > 0.0) out[v] = sp[v] / err[v];
  }
  return out;
}

inline std::vector<double> ssr(std::span<const Tensor3> members, const Tensor3& truth, const LatWeights& weights) {
  const auto per = ssr_per_channel(members, truth, weights);
  std::vector<double> out;
  for (std::size_t v = 0; v < per.size(); ++v) {
    if (!per[v]) throw Error(ErrorKind::DegenerateSkill, "ensemble mean equals truth in channel " + std::to_string(v));
    out.push_back(*per[v]);
  }
  return out;
}

inline std::vector<double> ssr(const EnsembleForecast& ensemble, const FieldFrame& truth, const LatWeights& weights) {
  detail::require_same_grid(ensemble[0], truth, "ssr");
  return ssr(ensemble.tensors(), truth.values(), weights);
}

// ---------------------------------------------------------------------------
// Region averages
// ---------------------------------------------------------------------------

struct RegionBox {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;
  std::string label;
};

/// Configurable default; the extent is a choice of this tool.
inline RegionBox central_india_box() { return {21.0, 26.0, 74.0, 82.0, "central_india"}; }

/// Weighted mean over cells whose centers fall inside `box`, with the
/// selected rows' weights rescaled to mean one.
inline std::vector<double> region_box_mean(const FieldFrame& frame, const RegionBox& box, const LatWeights& weights) {
  const auto& g = *frame.geometry();
  detail::require_weights(frame.shape(), weights);
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    if (g.lat()[i] >= box.lat_min && g.lat()[i] <= box.lat_max) rows.push_back(i);
  }
  for (std::size_t j = 0; j < g.cols(); ++j) {
    if (g.lon()[j] >= box.lon_min && g.lon()[j] <= box.lon_max) cols.push_back(j);
  }
  if (rows.empty() || cols.empty()) {
    throw Error(ErrorKind::RegionNotCovered, "box '" + box.label + "' contains no cell centers");
  }
  std::vector<double> w;
  for (std::size_t i : rows) w.push_back(weights[i]);
  double wsum = 0.0;
  for (double x : w) wsum += x;
  for (double& x : w) x *= double(w.size()) / wsum;
  const LatWeights sub(std::move(w));

  std::vector<double> out(frame.shape().channels), field(rows.size() * cols.size());
  for (std::size_t v = 0; v < out.size(); ++v) {
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < cols.size(); ++b) field[a * cols.size() + b] = frame(v, rows[a], cols[b]);
    }
    out[v] = weighted_area_mean(field, rows.size(), cols.size(), sub);
  }
  return out;
}

inline std::vector<double> region_box_mean(const FieldFrame& frame, const RegionBox& box) {
  return region_box_mean(frame, box, latitude_weights(*frame.geometry()));
}

}  // namespace regbench
