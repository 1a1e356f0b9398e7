#pragma once

#include <vector>

#include "voxmim/stats.hpp"

namespace voxmim {

// PLS1 by NIPALS with deflation. X columns and y are standardized with
// training statistics; prediction replays the component sequence on
// standardized test rows and de-standardizes.
struct PLSRModel {
  int components = 0;
  std::vector<double> x_mean, x_std;  // per column (zero-variance columns get std 1)
  double y_mean = 0.0, y_std = 1.0;
  std::vector<std::vector<double>> w;  // component weight vectors
  std::vector<std::vector<double>> p;  // loadings
  std::vector<double> q;               // per-component y loadings

  static constexpr double kTol = 1e-10;
  static constexpr int kMaxIter = 500;
};

PLSRModel plsr_fit(const DMatrix& x, const std::vector<double>& y, int components);
std::vector<double> plsr_predict(const PLSRModel& model, const DMatrix& x);

}  // namespace voxmim
