#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "regbench/metrics.hpp"

using namespace regbench;
using namespace testing_support;

namespace {

Tensor3 column(std::initializer_list<double> values) {
  Tensor3 t(Shape3{1, values.size(), 1});
  std::size_t i = 0;
  for (double x : values) t(0, i++, 0) = x;
  return t;
}

Tensor3 point(double x) { return Tensor3(Shape3{1, 1, 1}, x); }

const LatWeights& equator() {
  static const LatWeights w = latitude_weights(std::vector<double>{0.0});
  return w;
}

}  // namespace

TEST(Rmse, Anchors) {
  EXPECT_EQ(rmse(point(3.0), point(1.0), equator())[0], 2.0);
  const auto w = latitude_weights(std::vector<double>{0.0, 60.0});
  EXPECT_NEAR(rmse(column({1.0, 2.0}), column({0.0, 0.0}), w)[0], std::sqrt(2.0), 1e-15);
  std::mt19937_64 rng(1);
  const auto t = random_tensor({3, 4, 5}, rng);
  for (double r : rmse(t, t, latitude_weights(std::vector<double>{1, 2, 3, 4}))) EXPECT_EQ(r, 0.0);
  EXPECT_KIND(rmse(t, random_tensor({3, 4, 4}, rng), latitude_weights(std::vector<double>{1, 2, 3, 4})), ErrorKind::ShapeError);
}

TEST(Acc, Anchors) {
  const auto clim = Tensor3(Shape3{1, 1, 2});
  Tensor3 f(Shape3{1, 1, 2}), x(Shape3{1, 1, 2});
  f(0, 0, 0) = 1;
  x(0, 0, 0) = 1;
  x(0, 0, 1) = 1;
  EXPECT_NEAR(acc(f, x, clim, equator())[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(acc(x, x, clim, equator())[0], 1.0, 1e-15);
  EXPECT_NEAR(acc(x * -1.0, x, clim, equator())[0], -1.0, 1e-15);
  EXPECT_KIND(acc(clim, x, clim, equator()), ErrorKind::DegenerateAnomaly);
  EXPECT_KIND(acc(x, clim, clim, equator()), ErrorKind::DegenerateAnomaly);
  EXPECT_FALSE(acc_per_channel(clim, x, clim, equator())[0].has_value());
}

TEST(Acc, BoundedOnRandomInputs) {
  std::mt19937_64 rng(2);
  const auto w = latitude_weights(std::vector<double>{-20, 0, 20});
  for (int k = 0; k < 300; ++k) {
    const auto f = random_tensor({2, 3, 4}, rng), x = random_tensor({2, 3, 4}, rng), c = random_tensor({2, 3, 4}, rng, 0.1);
    for (double a : acc(f, x, c, w)) {
      EXPECT_GE(a, -1.0);
      EXPECT_LE(a, 1.0);
    }
  }
}

TEST(Crps, Anchors) {
  const std::vector<Tensor3> one{point(5.0)};
  EXPECT_EQ(crps(one, point(2.0), equator())[0], 3.0);
  const std::vector<Tensor3> two{point(0.0), point(2.0)};
  EXPECT_EQ(crps(two, point(1.0), equator())[0], 0.5);
  const std::vector<Tensor3> same{point(1.0), point(1.0), point(1.0)};
  EXPECT_EQ(crps(same, point(1.0), equator())[0], 0.0);
  EXPECT_KIND(crps(std::vector<Tensor3>{}, point(1.0), equator()), ErrorKind::InsufficientMembers);
  EXPECT_KIND(crps(std::vector<Tensor3>{point(0.0), column({1.0, 2.0})}, point(1.0), equator()), ErrorKind::ShapeError);
  // fair pair term: 4 / (2 * 2 * 1) = 1
  EXPECT_EQ(crps(two, point(1.0), equator(), true)[0], 0.0);
}

TEST(Crps, SingleMemberIsWeightedMae) {
  std::mt19937_64 rng(3);
  const std::vector<double> lat{-10, 5, 30};
  const auto w = latitude_weights(lat);
  for (int k = 0; k < 50; ++k) {
    const auto m = random_tensor({2, 3, 4}, rng), x = random_tensor({2, 3, 4}, rng);
    const auto got = crps(std::vector<Tensor3>{m}, x, w);
    for (std::size_t v = 0; v < 2; ++v) {
      std::vector<double> abs_err;
      for (std::size_t q = 0; q < 12; ++q) abs_err.push_back(std::abs(m.channel(v)[q] - x.channel(v)[q]));
      EXPECT_NEAR(got[v], weighted_area_mean(abs_err, 3, 4, w), 1e-13);
      EXPECT_GE(got[v], 0.0);
    }
  }
}

TEST(SpreadSsr, Anchors) {
  const std::vector<Tensor3> two{point(0.0), point(2.0)};
  EXPECT_NEAR(spread(two, equator())[0], std::sqrt(2.0), 1e-15);
  EXPECT_KIND(ssr(two, point(1.0), equator()), ErrorKind::DegenerateSkill);
  EXPECT_FALSE(ssr_per_channel(two, point(1.0), equator())[0].has_value());

  const std::vector<Tensor3> same{point(3.0), point(3.0)};
  EXPECT_EQ(spread(same, equator())[0], 0.0);
  EXPECT_EQ(ssr(same, point(1.0), equator())[0], 0.0);

  EXPECT_KIND(spread(std::vector<Tensor3>{point(1.0)}, equator()), ErrorKind::InsufficientMembers);
  EXPECT_KIND(ssr(std::vector<Tensor3>{point(1.0)}, point(0.0), equator()), ErrorKind::InsufficientMembers);
}

TEST(Metrics, MatchNaiveOracles) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> dim(1, 5), chans(1, 4), members(2, 5);
  std::uniform_real_distribution<double> lat(-80.0, 80.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng) + 1, v = chans(rng), m = members(rng);
    std::vector<double> lats;
    for (std::size_t i = 0; i < h; ++i) lats.push_back(lat(rng));
    std::sort(lats.begin(), lats.end());
    lats.erase(std::unique(lats.begin(), lats.end()), lats.end());
    const std::size_t rows = lats.size();
    const auto weights = latitude_weights(lats);
    const Shape3 s{v, rows, w};
    const auto f = random_tensor(s, rng), x = random_tensor(s, rng), c = random_tensor(s, rng, 0.3);
    std::vector<Tensor3> ens;
    std::vector<oracle::Field> ens_f;
    for (std::size_t k = 0; k < m; ++k) {
      ens.push_back(random_tensor(s, rng));
      ens_f.push_back(to_field(ens.back()));
    }
    const auto check = [&](const std::vector<double>& got, const std::vector<double>& ref, const char* name) {
      ASSERT_EQ(got.size(), ref.size());
      for (std::size_t q = 0; q < got.size(); ++q) EXPECT_TRUE(oracle::close(got[q], ref[q])) << name << " " << got[q] << " vs " << ref[q];
    };
    check(rmse(f, x, weights), oracle::rmse(to_field(f), to_field(x), lats), "rmse");
    check(acc(f, x, c, weights), oracle::acc(to_field(f), to_field(x), to_field(c), lats), "acc");
    check(crps(ens, x, weights), oracle::crps(ens_f, to_field(x), lats), "crps");
    check(crps(ens, x, weights, true), oracle::crps(ens_f, to_field(x), lats, true), "fair crps");
    check(spread(ens, weights), oracle::spread(ens_f, lats), "spread");
    check(ssr(ens, x, weights), oracle::ssr(ens_f, to_field(x), lats), "ssr");
  }
}

TEST(Ssr, CalibratedEnsembleNearExpectation) {
  std::mt19937_64 rng(5);
  const auto w = latitude_weights(GridGeometry::regular(0.0, 60.0, 0.5, 64, 64));
  std::vector<Tensor3> ens;
  for (int m = 0; m < 50; ++m) ens.push_back(random_tensor({1, 64, 64}, rng));
  const double r = ssr(ens, random_tensor({1, 64, 64}, rng), w)[0];
  EXPECT_NEAR(r, std::sqrt(50.0 / 51.0), 0.07);
}

TEST(EnsembleForecast, FrameOverloads) {
  std::mt19937_64 rng(6);
  const auto g = regular_geometry(3, 3);
  const auto truth = make_frame(random_tensor({2, 3, 3}, rng), g);
  std::vector<FieldFrame> members;
  for (int m = 0; m < 4; ++m) members.push_back(truth.with_values(random_tensor({2, 3, 3}, rng)));
  const EnsembleForecast e(members);
  const auto w = latitude_weights(*g);
  EXPECT_EQ(crps(e, truth, w), crps(e.tensors(), truth.values(), w));
  EXPECT_EQ(spread(e, w), spread(e.tensors(), w));
  const auto mean = e.mean();
  for (std::size_t k = 0; k < 18; ++k) {
    double s = 0.0;
    for (const auto& m : members) s += m.values()[k];
    EXPECT_NEAR(mean.values()[k], s / 4.0, 1e-15);
  }
  members.push_back(make_frame(Tensor3(Shape3{2, 3, 4}), regular_geometry(3, 4)));
  EXPECT_KIND(EnsembleForecast{members}, ErrorKind::ShapeError);
  EXPECT_KIND(EnsembleForecast{{}}, ErrorKind::InsufficientMembers);
}

TEST(RegionBox, Examples) {
  Tensor3 t(Shape3{1, 2, 1});
  t(0, 0, 0) = 1;
  t(0, 1, 0) = 4;
  const auto f = make_frame(t, make_geometry({0.0, 60.0}, 1));
  EXPECT_NEAR(region_box_mean(f, {-1.0, 61.0, 69.0, 71.0, "all"})[0], 2.0, 1e-15);
  EXPECT_EQ(region_box_mean(f, {59.0, 61.0, 69.0, 71.0, "one"})[0], 4.0);
  EXPECT_KIND(region_box_mean(f, {10.0, 20.0, 69.0, 71.0, "none"}), ErrorKind::RegionNotCovered);

  std::mt19937_64 rng(7);
  const auto g = regular_geometry(5, 6, 20.0, 73.0, 1.5);
  const auto r = make_frame(random_tensor({2, 5, 6}, rng), g);
  const auto full = region_box_mean(r, {0.0, 89.0, 0.0, 180.0, "full"}, latitude_weights(*g));
  for (std::size_t v = 0; v < 2; ++v) EXPECT_NEAR(full[v], weighted_area_mean(r.channel(v), 5, 6, latitude_weights(*g)), 1e-14);

  const auto box = central_india_box();
  EXPECT_EQ(box.lat_min, 21.0);
  EXPECT_EQ(box.lon_max, 82.0);
  // rows 21.5, 23.0, 24.5, 26.0 and columns 74.5 .. 77.0 lie inside
  const auto sub = subgrid_view(r, {1, 5}, {1, 6});
  const auto expect = region_box_mean(sub, {0.0, 89.0, 0.0, 180.0, "sub"});
  const auto got = region_box_mean(r, box);
  for (std::size_t v = 0; v < 2; ++v) EXPECT_NEAR(got[v], expect[v], 1e-14);
}
