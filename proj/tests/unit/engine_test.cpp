#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "regbench/engine.hpp"
#include "regbench/metrics.hpp"

using namespace regbench;
using namespace testing_support;

namespace {

/// Random-walk truth on a small grid, one frame per 6 hours.
std::vector<FieldFrame> walk(std::size_t steps, std::size_t v, std::size_t h, std::size_t w, std::uint64_t seed,
                             Timestamp start = make_time(2019, 1, 1)) {
  std::mt19937_64 rng(seed);
  const auto c = make_catalog(v);
  const auto g = regular_geometry(h, w);
  std::vector<FieldFrame> out;
  Tensor3 x = random_tensor({v, h, w}, rng, 5.0);
  for (std::size_t k = 0; k < steps; ++k) {
    out.push_back(make_frame(x, c, g, start + kStep * long(k)));
    x += random_tensor({v, h, w}, rng);
  }
  return out;
}

class ConstantIncrement final : public ModelAdapter {
 public:
  explicit ConstantIncrement(double c) : c_(c) {}
  Tensor3 increment(const StepInput& in) override { return Tensor3(in.history.back().shape(), c_); }

 private:
  double c_;
};

class NanAfter final : public ModelAdapter {
 public:
  explicit NanAfter(std::size_t step) : step_(step) {}
  Tensor3 increment(const StepInput& in) override {
    Tensor3 d(in.history.back().shape());
    if (in.step_index >= step_) d[d.size() - 1] = std::nan("");
    return d;
  }

 private:
  std::size_t step_;
};

class Recording final : public ModelAdapter {
 public:
  explicit Recording(std::size_t h) : h_(h) {}
  std::size_t negotiate(const AdapterCapabilities&) override { return h_; }
  Tensor3 increment(const StepInput& in) override {
    seen_history.push_back(in.history.size());
    seen_aux_channels.push_back(in.aux.back().shape().channels);
    first_times.push_back(in.history.front().time());
    return Tensor3(in.history.back().shape());
  }
  std::vector<std::size_t> seen_history, seen_aux_channels;
  std::vector<Timestamp> first_times;

 private:
  std::size_t h_;
};

RolloutOptions options(std::size_t leads, std::size_t halo) {
  RolloutOptions o;
  o.leads = leads;
  o.boundary.halo_width = halo;
  return o;
}

}  // namespace

TEST(Step, PersistenceAndOracle) {
  const auto frames = walk(3, 2, 4, 5, 1);
  MemoryFrameSource truth(frames);
  PersistenceAdapter p;
  const std::vector<FieldFrame> hist{frames[0]};
  const auto next = step(p, hist, hist);
  EXPECT_EQ(next.values(), frames[0].values());
  EXPECT_EQ(next.time(), frames[1].time());

  OracleAdapter o(truth);
  const auto exact = step(o, hist, hist);
  for (std::size_t k = 0; k < exact.values().size(); ++k) EXPECT_NEAR(exact.values()[k], frames[1].values()[k], 1e-12);
}

TEST(Step, NonFiniteRejected) {
  const auto frames = walk(1, 1, 2, 2, 2);
  NanAfter bad(0);
  EXPECT_KIND(step(bad, frames, frames), ErrorKind::NonFiniteForecast);
}

TEST(Rollout, PersistenceKeepsInteriorAndForcesRing) {
  const auto frames = walk(6, 2, 8, 9, 3);
  MemoryFrameSource truth(frames);
  PersistenceAdapter p;
  const auto t = rollout(p, truth, frames[0].time(), options(4, 2));
  ASSERT_EQ(t.leads(), 4u);
  const auto [rows, cols] = interior_ranges(8, 9, 2);
  for (std::size_t k = 1; k <= 4; ++k) {
    const auto& f = t.at_lead(k);
    EXPECT_EQ(f.time(), frames[0].time() + kStep * long(k));
    EXPECT_EQ(subgrid_view(f, rows, cols), subgrid_view(frames[0].with_time(f.time()), rows, cols));
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 9; ++j)
          if (i < 2 || j < 2 || i >= 6 || j >= 7) {
            EXPECT_EQ(f(v, i, j), frames[k](v, i, j));
          }
  }
}

TEST(Rollout, ConstantIncrementTelescopes) {
  const auto frames = walk(4, 1, 3, 3, 4);
  MemoryFrameSource truth(frames);
  ConstantIncrement c(0.25);
  const auto t = rollout(c, truth, frames[0].time(), options(3, 0));
  for (std::size_t k = 0; k < 9; ++k) EXPECT_EQ(t.at_lead(3).values()[k], frames[0].values()[k] + 3 * 0.25);
}

TEST(Rollout, OracleRecoversTruth) {
  const auto frames = walk(21, 3, 10, 12, 5);
  MemoryFrameSource truth(frames);
  OracleAdapter o(truth);
  const auto t = rollout(o, truth, frames[0].time(), options(20, 3));
  const auto w = latitude_weights(*frames[0].geometry());
  for (std::size_t k = 1; k <= 20; ++k) {
    for (double r : rmse(t.at_lead(k), frames[k], w)) EXPECT_LT(r, 1e-12);
  }
}

TEST(Rollout, DeterministicAndMissingFrames) {
  const auto frames = walk(5, 1, 6, 6, 6);
  MemoryFrameSource truth(frames);
  PersistenceAdapter p;
  const auto a = rollout(p, truth, frames[0].time(), options(4, 1));
  const auto b = rollout(p, truth, frames[0].time(), options(4, 1));
  for (std::size_t k = 1; k <= 4; ++k) EXPECT_EQ(a.at_lead(k), b.at_lead(k));
  try {
    rollout(p, truth, frames[0].time(), options(6, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingFrame);
    EXPECT_EQ(e.step(), 5u);
  }
  EXPECT_KIND(rollout(p, truth, frames[0].time() - kStep, options(1, 1)), ErrorKind::MissingFrame);
}

TEST(Rollout, ErrorsCarryStepIndex) {
  const auto frames = walk(6, 1, 6, 6, 7);
  MemoryFrameSource truth(frames);
  NanAfter bad(3);
  try {
    rollout(bad, truth, frames[0].time(), options(5, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteForecast);
    EXPECT_EQ(e.step(), 3u);
  }
}

TEST(Rollout, HistoryWindowSlides) {
  const auto frames = walk(8, 1, 4, 4, 8);
  MemoryFrameSource truth(frames);
  Recording r(2);
  rollout(r, truth, frames[2].time(), options(3, 1));
  EXPECT_EQ(r.seen_history, (std::vector<std::size_t>{3, 3, 3}));
  EXPECT_EQ(r.first_times[0], frames[0].time());
  EXPECT_EQ(r.first_times[2], frames[2].time());
}

TEST(Rollout, CoarseConditioningStacksChannels) {
  const auto frames = walk(4, 2, 8, 8, 9);
  std::vector<FieldFrame> coarse_frames;
  for (const auto& f : frames) coarse_frames.push_back(block_mean_downsample(f, 2));
  MemoryFrameSource truth(frames), coarse(coarse_frames);
  Recording r(0);
  RolloutOptions o;
  o.leads = 3;
  o.boundary.mode = ConditioningMode::CoarseConditioning;
  const auto t = rollout(r, truth, frames[0].time(), o, &coarse);
  EXPECT_EQ(r.seen_aux_channels, (std::vector<std::size_t>{4, 4, 4}));
  EXPECT_EQ(t.mode, ConditioningMode::CoarseConditioning);
  EXPECT_EQ(t.at_lead(3).values(), frames[0].values());
  EXPECT_KIND(rollout(r, truth, frames[0].time(), o), ErrorKind::InvalidConfig);
}

TEST(DeterministicLoss, Examples) {
  const auto one = latitude_weights(std::vector<double>{0.0});
  EXPECT_EQ(deterministic_loss(Tensor3(Shape3{1, 1, 1}, 2.0), Tensor3(Shape3{1, 1, 1}), one), 4.0);
  const auto two = latitude_weights(std::vector<double>{0.0, 60.0});
  Tensor3 d(Shape3{1, 2, 1});
  d(0, 0, 0) = 1;
  d(0, 1, 0) = 2;
  EXPECT_NEAR(deterministic_loss(d, Tensor3(Shape3{1, 2, 1}), two), 2.0, 1e-15);
  EXPECT_EQ(deterministic_loss(d, d, two), 0.0);
  EXPECT_KIND(deterministic_loss(d, Tensor3(Shape3{1, 1, 2}), two), ErrorKind::ShapeError);
}

TEST(DeterministicLoss, MatchesTripleLoop) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> lat(-70.0, 70.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> lats;
    for (int i = 0; i < 4; ++i) lats.push_back(lat(rng));
    std::sort(lats.begin(), lats.end());
    const auto p = random_tensor({5, 4, 3}, rng), a = random_tensor({5, 4, 3}, rng);
    const double got = deterministic_loss(p, a, latitude_weights(lats));
    const double ref = oracle::deterministic_loss(to_field(p), to_field(a), lats);
    EXPECT_TRUE(oracle::close(got, ref)) << got << " vs " << ref;
  }
}

TEST(Builtins, ClimatologyIncrementAndLinearDecay) {
  const auto frames = walk(3, 2, 3, 3, 11, make_time(2019, 6, 1));
  std::mt19937_64 rng(12);
  std::vector<FieldFrame> clim_frames;
  const auto flat = random_tensor({2, 3, 3}, rng);
  for (int y = 2000; y < 2003; ++y) {
    for (int h : {0, 6, 12}) clim_frames.push_back(make_frame(flat, frames[0].catalog(), frames[0].geometry(), make_time(y, 6, 1, h)));
  }
  auto table = std::make_shared<const ClimatologyTable>(fit_climatology(clim_frames));
  const std::vector<FieldFrame> hist{frames[0]};

  ClimatologyIncrementAdapter ci(table);
  const auto landed = step(ci, hist, hist);
  for (std::size_t k = 0; k < flat.size(); ++k) EXPECT_NEAR(landed.values()[k], flat[k], 1e-12);

  LinearDecayAdapter ld(table, 1.0);
  EXPECT_EQ(ld.increment({frames[0].time(), hist, hist, 1}), ci.increment({frames[0].time(), hist, hist, 1}));

  LinearDecayAdapter half(table, 0.5);
  const auto d = half.increment({frames[0].time(), hist, hist, 1});
  for (std::size_t k = 0; k < d.size(); ++k) EXPECT_DOUBLE_EQ(d[k], -0.5 * (frames[0].values()[k] - flat[k]));

  EXPECT_KIND(serve_builtin("climatology_increment"), ErrorKind::InvalidConfig);
  EXPECT_KIND(serve_builtin("linear_decay"), ErrorKind::InvalidConfig);
  EXPECT_KIND(serve_builtin("oracle"), ErrorKind::InvalidConfig);
  EXPECT_KIND(serve_builtin("unet"), ErrorKind::InvalidConfig);
  EXPECT_EQ(serve_builtin("persistence")->increment({frames[0].time(), hist, hist, 1}), Tensor3(Shape3{2, 3, 3}));

  ClimatologyIncrementAdapter missing(table);
  const std::vector<FieldFrame> other{frames[0].with_time(make_time(2019, 7, 1))};
  EXPECT_KIND(step(missing, other, other, 2), ErrorKind::AdapterError);
}
