#pragma once

#include <cstddef>
#include <deque>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "regbench/baselines.hpp"
#include "regbench/conditioning.hpp"
#include "regbench/dataset.hpp"

namespace regbench {

// ---------------------------------------------------------------------------
// Adapter interface
// ---------------------------------------------------------------------------

struct AdapterCapabilities {
  CatalogPtr catalog;
  GeometryPtr geometry;
  std::size_t history = 0;
  ConditioningMode mode = ConditioningMode::BoundaryForcing;
  std::size_t halo_width = kDefaultHaloWidth;
};

/// What a forecaster sees for one step: the states X_{t-h..t} (oldest first)
/// and the matching model-ready auxiliary frames. Under boundary forcing an
/// auxiliary frame is the ring-wrapped state; under coarse conditioning it is
/// the state stacked with the interpolated coarse truth (2V channels).
struct StepInput {
  Timestamp time;
  std::span<const FieldFrame> history;
  std::span<const FieldFrame> aux;
  std::size_t step_index = 0;
};

/// A forecaster mapping (history, aux) to the increment X_{t+1} - X_t in physical units.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;

  /// Called before a trajectory; returns the history length the adapter will consume.
  virtual std::size_t negotiate(const AdapterCapabilities& requested) { return requested.history; }

  virtual Tensor3 increment(const StepInput& input) = 0;
};

// ---------------------------------------------------------------------------
// One step
// ---------------------------------------------------------------------------

/// X_t + adapter increment, stamped t + 6h. `history.back()` is X_t.
inline FieldFrame step(ModelAdapter& adapter, std::span<const FieldFrame> history, std::span<const FieldFrame> aux,
                       std::size_t step_index = 0) {
  if (history.empty()) throw Error(ErrorKind::InvalidConfig, "step needs at least the current state", step_index);
  const FieldFrame& current = history.back();
  Tensor3 delta;
  try {
    delta = adapter.increment(StepInput{current.time(), history, aux, step_index});
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NonFiniteForecast || e.kind() == ErrorKind::AdapterError) {
      throw Error(e.kind(), e.what(), e.step().value_or(step_index));
    }
    throw Error(ErrorKind::AdapterError, e.what(), step_index);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::AdapterError, e.what(), step_index);
  }
  if (delta.shape() != current.shape()) {
    throw Error(ErrorKind::AdapterError, "increment of shape " + to_string(delta.shape()) + ", expected " +
                                             to_string(current.shape()), step_index);
  }
  if (!delta.all_finite()) throw Error(ErrorKind::NonFiniteForecast, "adapter returned a non-finite increment", step_index);
  Tensor3 next = current.values() + delta;
  if (!next.all_finite()) throw Error(ErrorKind::NonFiniteForecast, "forecast overflowed", step_index);
  return FieldFrame(current.time() + kStep, std::move(next), current.catalog(), current.geometry());
}

// ---------------------------------------------------------------------------
// Rollout
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultLeads = 20;

struct RolloutOptions {
  std::size_t leads = kDefaultLeads;
  BoundarySpec boundary;
  std::size_t history = 0;
};

struct Trajectory {
  Timestamp init;
  ConditioningMode mode = ConditioningMode::BoundaryForcing;
  FieldFrame initial;
  /// forecasts[k - 1] is valid at init + 6h * k.
  std::vector<FieldFrame> forecasts;

  std::size_t leads() const { return forecasts.size(); }
  const FieldFrame& at_lead(std::size_t k) const { return k == 0 ? initial : forecasts.at(k - 1); }
};

/// Model-ready auxiliary frame for a state.
inline FieldFrame assemble_aux(const FieldFrame& state, const BoundarySpec& spec, const FrameSource* coarse) {
  if (spec.mode == ConditioningMode::BoundaryForcing) return state;
  if (!coarse) throw Error(ErrorKind::InvalidConfig, "coarse conditioning needs a coarse frame source");
  const auto upsampled = coarse_on_regional_grid(coarse->get(state.time()), state.geometry());
  return concat_conditioning(state, upsampled);
}

/// Autoregressive rollout from the truth state at `init`. Under boundary
/// forcing every predicted state has its ring replaced with truth before it is
/// stored and fed back; under coarse conditioning each step receives the
/// coarse truth at the time it predicts from.
inline Trajectory rollout(ModelAdapter& adapter, const FrameSource& truth, Timestamp init, const RolloutOptions& options,
                          const FrameSource* coarse = nullptr) {
  const FieldFrame first = truth.get(init);
  const auto& spec = options.boundary;
  spec.validate(*first.geometry());

  const std::size_t h = adapter.negotiate(
      AdapterCapabilities{first.catalog(), first.geometry(), options.history, spec.mode, spec.halo_width});

  std::deque<FieldFrame> states;
  std::deque<FieldFrame> aux;
  for (std::size_t back = h; back > 0; --back) {
    states.push_back(truth.get(init - kStep * long(back)));
    aux.push_back(assemble_aux(states.back(), spec, coarse));
  }
  states.push_back(first);
  aux.push_back(assemble_aux(first, spec, coarse));

  Trajectory out{init, spec.mode, first, {}};
  out.forecasts.reserve(options.leads);
  for (std::size_t k = 1; k <= options.leads; ++k) {
    const std::vector<FieldFrame> hist(states.begin(), states.end());
    const std::vector<FieldFrame> aux_now(aux.begin(), aux.end());
    FieldFrame next = step(adapter, hist, aux_now, k);
    try {
      if (spec.mode == ConditioningMode::BoundaryForcing && spec.halo_width > 0) {
        next = apply_boundary_forcing(next, truth.get(next.time()), spec.halo_width);
      }
      aux.push_back(assemble_aux(next, spec, coarse));
    } catch (const Error& e) {
      throw Error(e.kind(), e.what(), k);
    }
    states.push_back(next);
    states.pop_front();
    aux.pop_front();
    out.forecasts.push_back(std::move(next));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic objective
// ---------------------------------------------------------------------------

/// (1 / (V H W)) * sum_v sum_i sum_j L(i) (pred - true)^2
inline double deterministic_loss(const Tensor3& predicted, const Tensor3& actual, const LatWeights& weights) {
  if (predicted.shape() != actual.shape()) {
    throw Error(ErrorKind::ShapeError, "increments " + to_string(predicted.shape()) + " vs " + to_string(actual.shape()));
  }
  const auto& s = predicted.shape();
  if (weights.size() != s.rows) throw Error(ErrorKind::ShapeError, "weights do not match the grid rows");
  std::vector<double> sq(s.plane());
  double total = 0.0;
  for (std::size_t v = 0; v < s.channels; ++v) {
    const auto p = predicted.channel(v), a = actual.channel(v);
    for (std::size_t k = 0; k < sq.size(); ++k) sq[k] = (p[k] - a[k]) * (p[k] - a[k]);
    total += weighted_area_mean(sq, s.rows, s.cols, weights);
  }
  return total / double(s.channels);
}

// ---------------------------------------------------------------------------
// Built-in forecasters
// ---------------------------------------------------------------------------

/// Zero increment.
class PersistenceAdapter final : public ModelAdapter {
 public:
  Tensor3 increment(const StepInput& in) override { return Tensor3(in.history.back().shape()); }
};

/// Lands on the climatology of the next valid time: C(t+1) - X_t.
class ClimatologyIncrementAdapter final : public ModelAdapter {
 public:
  explicit ClimatologyIncrementAdapter(std::shared_ptr<const ClimatologyTable> table) : table_(std::move(table)) {
    if (!table_) throw Error(ErrorKind::InvalidConfig, "climatology_increment needs a climatology table");
  }
  Tensor3 increment(const StepInput& in) override {
    const auto& x = in.history.back();
    return table_->at(ClimatologyKey::of(in.time + kStep)).mean - x.values();
  }

 private:
  std::shared_ptr<const ClimatologyTable> table_;
};

/// Relaxes toward climatology: -alpha * (X_t - C(t)).
class LinearDecayAdapter final : public ModelAdapter {
 public:
  LinearDecayAdapter(std::shared_ptr<const ClimatologyTable> table, double alpha) : table_(std::move(table)), alpha_(alpha) {
    if (!table_) throw Error(ErrorKind::InvalidConfig, "linear_decay needs a climatology table");
  }
  Tensor3 increment(const StepInput& in) override {
    const auto& x = in.history.back();
    return (x.values() - table_->at(ClimatologyKey::of(in.time)).mean) * -alpha_;
  }

 private:
  std::shared_ptr<const ClimatologyTable> table_;
  double alpha_;
};

/// Returns the true increment truth(t+1) - X_t.
class OracleAdapter final : public ModelAdapter {
 public:
  explicit OracleAdapter(const FrameSource& truth) : truth_(truth) {}
  Tensor3 increment(const StepInput& in) override {
    return truth_.get(in.time + kStep).values() - in.history.back().values();
  }

 private:
  const FrameSource& truth_;
};

struct BuiltinParams {
  std::shared_ptr<const ClimatologyTable> climatology;
  double alpha = 0.5;
  /// Needed by "oracle" only.
  const FrameSource* truth = nullptr;
};

/// persistence | climatology_increment | linear_decay | oracle
inline std::unique_ptr<ModelAdapter> serve_builtin(const std::string& name, const BuiltinParams& params = {}) {
  if (name == "persistence") return std::make_unique<PersistenceAdapter>();
  if (name == "climatology_increment") return std::make_unique<ClimatologyIncrementAdapter>(params.climatology);
  if (name == "linear_decay") return std::make_unique<LinearDecayAdapter>(params.climatology, params.alpha);
  if (name == "oracle") {
    if (!params.truth) throw Error(ErrorKind::InvalidConfig, "oracle adapter needs truth frames");
    return std::make_unique<OracleAdapter>(*params.truth);
  }
  throw Error(ErrorKind::InvalidConfig, "unknown built-in adapter '" + name + "'");
}

}  // namespace regbench
