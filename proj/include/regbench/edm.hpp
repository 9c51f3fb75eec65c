#pragma once

// Elucidated-diffusion sampling over increments: the power-law noise
// schedule, stochastic churn, Heun and DPM-Solver++(2S) samplers, ensemble
// generation and the denoising objectives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "regbench/engine.hpp"
#include "regbench/parallel.hpp"
#include "regbench/random.hpp"

namespace regbench {

struct NoiseSchedule {
  double sigma_max = 80.0;
  double sigma_min = 0.03;
  double rho = 7.0;
  std::size_t num_levels = 20;
  double churn = 2.5;
  double churn_min = 0.75;
  double churn_max = 80.0;
  double noise_inflation = 1.05;
  std::size_t ensemble_size = 50;

  /// Values used when drawing training noise levels.
  static NoiseSchedule training() {
    NoiseSchedule s;
    s.sigma_max = 88.0;
    s.sigma_min = 0.02;
    return s;
  }

  void validate() const {
    if (!(sigma_max > sigma_min) || !(sigma_min > 0.0)) throw Error(ErrorKind::InvalidConfig, "need sigma_max > sigma_min > 0");
    if (!(rho > 0.0)) throw Error(ErrorKind::InvalidConfig, "rho must be positive");
    if (num_levels < 2) throw Error(ErrorKind::InvalidConfig, "at least two noise levels");
    if (ensemble_size < 1) throw Error(ErrorKind::InvalidConfig, "ensemble needs at least one member");
    if (!(churn >= 0.0)) throw Error(ErrorKind::InvalidConfig, "churn rate must be non-negative");
  }
};

inline json schedule_to_json(const NoiseSchedule& s) {
  return json{{"sigma_max", s.sigma_max},   {"sigma_min", s.sigma_min},         {"rho", s.rho},
              {"num_levels", s.num_levels}, {"churn", s.churn},                 {"churn_min", s.churn_min},
              {"churn_max", s.churn_max},   {"noise_inflation", s.noise_inflation}, {"ensemble_size", s.ensemble_size}};
}

inline NoiseSchedule schedule_from_json(const json& j) {
  NoiseSchedule s;
  s.sigma_max = j.value("sigma_max", s.sigma_max);
  s.sigma_min = j.value("sigma_min", s.sigma_min);
  s.rho = j.value("rho", s.rho);
  s.num_levels = j.value("num_levels", s.num_levels);
  s.churn = j.value("churn", s.churn);
  s.churn_min = j.value("churn_min", s.churn_min);
  s.churn_max = j.value("churn_max", s.churn_max);
  s.noise_inflation = j.value("noise_inflation", s.noise_inflation);
  s.ensemble_size = j.value("ensemble_size", s.ensemble_size);
  s.validate();
  return s;
}

/// N + 1 levels: (max^(1/rho) + i/(N-1) (min^(1/rho) - max^(1/rho)))^rho for
/// i < N, then 0. The endpoints are pinned to sigma_max and sigma_min.
inline std::vector<double> sigma_schedule(const NoiseSchedule& s) {
  s.validate();
  const std::size_t n = s.num_levels;
  const double hi = std::pow(s.sigma_max, 1.0 / s.rho), lo = std::pow(s.sigma_min, 1.0 / s.rho);
  std::vector<double> sigma(n + 1);
  for (std::size_t i = 0; i < n; ++i) sigma[i] = std::pow(hi + double(i) / double(n - 1) * (lo - hi), s.rho);
  sigma[0] = s.sigma_max;
  sigma[n - 1] = s.sigma_min;
  sigma[n] = 0.0;
  return sigma;
}

inline double churn_gamma(double sigma, const NoiseSchedule& s) {
  if (sigma < s.churn_min || sigma > s.churn_max) return 0.0;
  return std::min(s.churn / double(s.num_levels), std::numbers::sqrt2 - 1.0);
}

// ---------------------------------------------------------------------------
// Denoisers
// ---------------------------------------------------------------------------

/// D(x, sigma, conditioning): estimate of the clean increment. Implementations
/// must tolerate concurrent calls.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor3 denoise(const Tensor3& noisy, double sigma, std::span<const FieldFrame> conditioning) const = 0;
};

/// Exact posterior mean when every element is independently Normal(mean, std^2).
class GaussianDenoiser final : public Denoiser {
 public:
  GaussianDenoiser(double mean, double std) : mean_(mean), var_(std * std) {}
  Tensor3 denoise(const Tensor3& x, double sigma, std::span<const FieldFrame>) const override {
    const double s2 = sigma * sigma, keep = var_ / (var_ + s2), pull = s2 / (var_ + s2);
    Tensor3 out(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] * keep + mean_ * pull;
    return out;
  }

 private:
  double mean_;
  double var_;
};

class ConstantDenoiser final : public Denoiser {
 public:
  explicit ConstantDenoiser(double value) : value_(value) {}
  Tensor3 denoise(const Tensor3& x, double, std::span<const FieldFrame>) const override { return Tensor3(x.shape(), value_); }

 private:
  double value_;
};

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

enum class SamplerKind { Heun, DpmSolverPP2S };

inline SamplerKind parse_sampler(const std::string& s) {
  if (s == "heun") return SamplerKind::Heun;
  if (s == "dpmpp2s" || s == "dpmsolver++2s") return SamplerKind::DpmSolverPP2S;
  throw Error(ErrorKind::InvalidConfig, "unknown sampler '" + s + "'");
}
inline std::string to_string(SamplerKind k) { return k == SamplerKind::Heun ? "heun" : "dpmpp2s"; }

namespace detail {

class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : engine_(seed) {}
  void add_scaled(Tensor3& x, double scale) {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += scale * normal_(engine_);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline Tensor3 checked_denoise(const Denoiser& d, const Tensor3& x, double sigma, std::span<const FieldFrame> cond) {
  Tensor3 out = d.denoise(x, sigma, cond);
  if (out.shape() != x.shape()) {
    throw Error(ErrorKind::ShapeError, "denoiser returned " + to_string(out.shape()) + " for " + to_string(x.shape()));
  }
  if (!out.all_finite()) throw Error(ErrorKind::NonFiniteForecast, "denoiser output is not finite at sigma " + std::to_string(sigma));
  return out;
}

/// a * x + b * y, elementwise.
inline Tensor3 blend(double a, const Tensor3& x, double b, const Tensor3& y) {
  Tensor3 out(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = a * x[k] + b * y[k];
  return out;
}

/// Shared driver: start from sigma_0 noise, and at each level inflate by the
/// churn factor before calling `advance(x, sigma_hat, sigma_next)`.
template <typename Advance>
Tensor3 run_sampler(Shape3 shape, const NoiseSchedule& schedule, std::uint64_t seed, Advance&& advance) {
  const auto sigma = sigma_schedule(schedule);
  NoiseStream noise(seed);
  Tensor3 x(shape);
  noise.add_scaled(x, sigma[0]);
  for (std::size_t i = 0; i + 1 < sigma.size(); ++i) {
    const double gamma = churn_gamma(sigma[i], schedule);
    const double sigma_hat = sigma[i] * (1.0 + gamma);
    if (gamma > 0.0) {
      noise.add_scaled(x, schedule.noise_inflation * std::sqrt(sigma_hat * sigma_hat - sigma[i] * sigma[i]));
    }
    x = advance(x, sigma_hat, sigma[i + 1]);
  }
  return x;
}

}  // namespace detail

/// Stochastic second-order Heun sampler. The final step to sigma = 0 is the
/// Euler step, which reduces to the denoiser output.
inline Tensor3 sample_heun(const Denoiser& denoiser, Shape3 shape, std::span<const FieldFrame> conditioning,
                           const NoiseSchedule& schedule, std::uint64_t seed) {
  return detail::run_sampler(shape, schedule, seed, [&](const Tensor3& x, double s_hat, double s_next) {
    Tensor3 d0 = detail::checked_denoise(denoiser, x, s_hat, conditioning);
    if (s_next == 0.0) return d0;
    // slope d = (x - D) / sigma
    const double h = s_next - s_hat;
    Tensor3 slope = detail::blend(1.0 / s_hat, x, -1.0 / s_hat, d0);
    Tensor3 euler = x + slope * h;
    const Tensor3 d1 = detail::checked_denoise(denoiser, euler, s_next, conditioning);
    const Tensor3 slope_next = detail::blend(1.0 / s_next, euler, -1.0 / s_next, d1);
    return x + (slope + slope_next) * (0.5 * h);
  });
}

/// DPM-Solver++(2S) in log-sigma time with the midpoint at sqrt(sigma_hat * sigma_next).
inline Tensor3 sample_dpmpp2s(const Denoiser& denoiser, Shape3 shape, std::span<const FieldFrame> conditioning,
                              const NoiseSchedule& schedule, std::uint64_t seed) {
  return detail::run_sampler(shape, schedule, seed, [&](const Tensor3& x, double s_hat, double s_next) {
    const Tensor3 d0 = detail::checked_denoise(denoiser, x, s_hat, conditioning);
    if (s_next == 0.0) return d0;
    const double s_mid = std::sqrt(s_hat * s_next);
    const double r_mid = s_mid / s_hat, r_next = s_next / s_hat;
    const Tensor3 u = detail::blend(r_mid, x, 1.0 - r_mid, d0);
    const Tensor3 d_mid = detail::checked_denoise(denoiser, u, s_mid, conditioning);
    return detail::blend(r_next, x, 1.0 - r_next, d_mid);
  });
}

inline Tensor3 sample(SamplerKind kind, const Denoiser& denoiser, Shape3 shape, std::span<const FieldFrame> conditioning,
                      const NoiseSchedule& schedule, std::uint64_t seed) {
  return kind == SamplerKind::Heun ? sample_heun(denoiser, shape, conditioning, schedule, seed)
                                   : sample_dpmpp2s(denoiser, shape, conditioning, schedule, seed);
}

/// `schedule.ensemble_size` samples; member m uses member_seed(base_seed, m).
inline std::vector<Tensor3> generate_ensemble(const Denoiser& denoiser, Shape3 shape, std::span<const FieldFrame> conditioning,
                                              const NoiseSchedule& schedule, std::uint64_t base_seed,
                                              SamplerKind kind = SamplerKind::Heun, std::size_t workers = 1) {
  schedule.validate();
  std::vector<Tensor3> members(schedule.ensemble_size);
  parallel_for(members.size(), workers, [&](std::size_t m) {
    members[m] = sample(kind, denoiser, shape, conditioning, schedule, member_seed(base_seed, m));
  });
  return members;
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

/// Mean over all elements of (eps - eps_hat)^2.
inline double edm_denoising_loss(const Tensor3& eps_hat, const Tensor3& eps) {
  if (eps_hat.shape() != eps.shape()) {
    throw Error(ErrorKind::ShapeError, "noise estimates " + to_string(eps_hat.shape()) + " vs " + to_string(eps.shape()));
  }
  double total = 0.0;
  for (std::size_t k = 0; k < eps.size(); ++k) total += (eps[k] - eps_hat[k]) * (eps[k] - eps_hat[k]);
  return total / double(eps.size());
}

/// Denoised-signal regression weighted by (sigma^2 + sigma_data^2) / (sigma sigma_data)^2.
inline double edm_weighted_loss(const Tensor3& denoised, const Tensor3& clean, double sigma, double sigma_data = 1.0) {
  const double weight = (sigma * sigma + sigma_data * sigma_data) / ((sigma * sigma_data) * (sigma * sigma_data));
  return weight * edm_denoising_loss(denoised, clean);
}

struct NoisyIncrement {
  double sigma = 0.0;
  Tensor3 noise;
  Tensor3 noisy;
};

/// Draws sigma uniformly over the training schedule's levels and returns
/// clean + sigma * eps with eps standard normal.
inline NoisyIncrement corrupt_increment(const Tensor3& clean, std::mt19937_64& rng,
                                        const NoiseSchedule& training = NoiseSchedule::training()) {
  const auto levels = sigma_schedule(training);
  std::uniform_int_distribution<std::size_t> pick(0, training.num_levels - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  NoisyIncrement out;
  out.sigma = levels[pick(rng)];
  out.noise = Tensor3(clean.shape());
  for (std::size_t k = 0; k < clean.size(); ++k) out.noise[k] = normal(rng);
  out.noisy = clean + out.noise * out.sigma;
  return out;
}

// ---------------------------------------------------------------------------
// Probabilistic forecaster
// ---------------------------------------------------------------------------

/// Forecaster that samples each increment from a denoiser, conditioned on the
/// step's auxiliary frames. Step k of member m draws with seed
/// hash(member seed, k), so members and steps are reproducible individually.
class DiffusionAdapter final : public ModelAdapter {
 public:
  DiffusionAdapter(const Denoiser& denoiser, NoiseSchedule schedule, SamplerKind kind, std::uint64_t seed)
      : denoiser_(denoiser), schedule_(schedule), kind_(kind), seed_(seed) {
    schedule_.validate();
  }
  Tensor3 increment(const StepInput& in) override {
    return sample(kind_, denoiser_, in.history.back().shape(), in.aux, schedule_, hash_key({seed_, in.step_index}));
  }

 private:
  const Denoiser& denoiser_;
  NoiseSchedule schedule_;
  SamplerKind kind_;
  std::uint64_t seed_;
};

/// One trajectory per ensemble member, all from the same initial state.
inline std::vector<Trajectory> ensemble_rollout(const Denoiser& denoiser, const FrameSource& truth, Timestamp init,
                                                const RolloutOptions& options, const NoiseSchedule& schedule,
                                                std::uint64_t base_seed, SamplerKind kind, std::size_t workers = 1,
                                                const FrameSource* coarse = nullptr) {
  schedule.validate();
  std::vector<std::unique_ptr<Trajectory>> slots(schedule.ensemble_size);
  parallel_for(slots.size(), workers, [&](std::size_t m) {
    DiffusionAdapter adapter(denoiser, schedule, kind, member_seed(base_seed, m));
    slots[m] = std::make_unique<Trajectory>(rollout(adapter, truth, init, options, coarse));
  });
  std::vector<Trajectory> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace regbench
