#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "ahiv/data.hpp"
#include "ahiv/first_stage.hpp"

namespace ahiv::detail {

// Distinct observed times and each subject's position on that grid.
struct TimeGrid {
  std::vector<double> times;        // g_1 < ... < g_m
  std::vector<int> subject_index;   // per subject: k with g_k == T*_i

  int m() const { return static_cast<int>(times.size()); }

  // last k (0-based) with g_k <= t; -1 if t < g_0
  int locate(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    return static_cast<int>(it - times.begin()) - 1;
  }
};

inline TimeGrid build_grid(const Dataset& data) {
  TimeGrid grid;
  grid.times.reserve(data.records.size());
  for (const auto& r : data.records) grid.times.push_back(r.time);
  std::sort(grid.times.begin(), grid.times.end());
  grid.times.erase(std::unique(grid.times.begin(), grid.times.end()), grid.times.end());
  grid.subject_index.reserve(data.records.size());
  for (const auto& r : data.records) {
    auto it = std::lower_bound(grid.times.begin(), grid.times.end(), r.time);
    grid.subject_index.push_back(static_cast<int>(it - grid.times.begin()));
  }
  return grid;
}

// Second-stage regressors Z_i = (exposure, confounders..., residual).
inline Eigen::MatrixXd build_z(const Dataset& data, const FirstStageFit& fs) {
  const int n = data.n();
  const int d = data.p() + 2;
  Eigen::MatrixXd z(n, d);
  for (int i = 0; i < n; ++i) {
    const auto& r = data.records[static_cast<std::size_t>(i)];
    z(i, 0) = r.exposure;
    for (int j = 0; j < data.p(); ++j) z(i, 1 + j) = r.confounders[static_cast<std::size_t>(j)];
    z(i, d - 1) = fs.residuals(i);
  }
  return z;
}

}  // namespace ahiv::detail
