#pragma once

#include "voxmim/stats.hpp"

namespace voxmim {

struct PCAResult {
  DMatrix projected;                     // (n, dims)
  DMatrix components;                    // (dims, features)
  std::vector<double> explained_ratio;   // per kept component
};

// top-`dims` principal components by explained variance; deterministic sign
// convention: each component's largest-magnitude loading is positive
PCAResult pca_project(const DMatrix& x, int dims);

}  // namespace voxmim
