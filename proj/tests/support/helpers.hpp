#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <unistd.h>

#include "oracles.hpp"
#include "regbench/error.hpp"
#include "regbench/grid.hpp"
#include "regbench/time.hpp"

#define EXPECT_KIND(stmt, expected)                                              \
  do {                                                                           \
    try {                                                                        \
      stmt;                                                                      \
      ADD_FAILURE() << "expected " << ::regbench::to_string(expected) << ", nothing thrown"; \
    } catch (const ::regbench::Error& e_) {                                      \
      EXPECT_EQ(e_.kind(), expected) << e_.what();                               \
    }                                                                            \
  } while (0)

namespace testing_support {

using namespace regbench;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "rb") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline CatalogPtr make_catalog(std::size_t channels) {
  std::vector<Channel> ch;
  for (std::size_t v = 0; v < channels; ++v) ch.push_back({"c" + std::to_string(v), std::nullopt, "1"});
  return std::make_shared<const VariableCatalog>(std::move(ch));
}

inline GeometryPtr make_geometry(std::vector<double> lat, std::size_t cols) {
  std::vector<double> lon;
  for (std::size_t j = 0; j < cols; ++j) lon.push_back(70.0 + double(j));
  return std::make_shared<const GridGeometry>(std::move(lat), std::move(lon), 1.0);
}

inline GeometryPtr regular_geometry(std::size_t rows, std::size_t cols, double lat0 = 10.0, double lon0 = 70.0,
                                    double step = 1.0) {
  return std::make_shared<const GridGeometry>(GridGeometry::regular(lat0, lon0, step, rows, cols));
}

inline FieldFrame make_frame(Tensor3 values, GeometryPtr geometry, Timestamp t = make_time(2019, 1, 1)) {
  return FieldFrame(t, std::move(values), make_catalog(values.shape().channels), std::move(geometry));
}

inline FieldFrame make_frame(Tensor3 values, CatalogPtr catalog, GeometryPtr geometry, Timestamp t) {
  return FieldFrame(t, std::move(values), std::move(catalog), std::move(geometry));
}

inline Tensor3 random_tensor(Shape3 s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor3 out(s);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = n(rng);
  return out;
}

inline oracle::Field to_field(const Tensor3& t) {
  const auto& s = t.shape();
  oracle::Field f(s.channels, std::vector<std::vector<double>>(s.rows, std::vector<double>(s.cols)));
  for (std::size_t v = 0; v < s.channels; ++v)
    for (std::size_t i = 0; i < s.rows; ++i)
      for (std::size_t j = 0; j < s.cols; ++j) f[v][i][j] = t(v, i, j);
  return f;
}

}  // namespace testing_support
