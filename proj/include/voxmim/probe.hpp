#pragma once

#include "voxmim/stats.hpp"

namespace voxmim {

struct ProbeOptions {
  double l2 = 1e-2;
  int iterations = 500;
  double lr = 0.1;
};

struct ProbeResult {
  MetricsReport report;            // on the test split
  std::vector<double> test_scores; // sigmoid outputs
  std::vector<int> test_predictions;
};

// L2-regularized logistic regression trained by full-batch Adam on the tensor
// engine in double precision; deterministic for fixed options
ProbeResult linear_probe(const DMatrix& x_train, const std::vector<int>& y_train,
                         const DMatrix& x_test, const std::vector<int>& y_test,
                         const ProbeOptions& opts = {});

}  // namespace voxmim
