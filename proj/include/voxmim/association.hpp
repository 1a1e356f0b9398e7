#pragma once

#include <string>
#include <vector>

#include "voxmim/stats.hpp"

namespace voxmim {

struct AssociationOptions {
  int repetitions = 20;
  int folds = 10;
  int plsr_components = 5;
  double fdr_q = 0.05;
  double bonferroni_alpha = 0.05;
  bool age_control = false;
  // r aggregation: per-fold r averaged over all (repetition, fold) cells by
  // default; pooled mode computes r on pooled out-of-fold predictions per
  // repetition instead
  bool pooled_r = false;
  uint64_t fold_seed = 4;
};

struct AssociationEntry {
  int layer = 0;
  std::string metric;
  double mean_r = 0.0;
  double std_r = 0.0;
  double p = 1.0;
  bool fdr_significant = false;
};

// Repeated k-fold PLSR association between per-layer features and behavior
// scores. features: [layer] -> (n_samples, dim) matrix. FDR runs across the
// whole (layer x metric) table.
std::vector<AssociationEntry> run_association(const std::vector<DMatrix>& features,
                                              const std::vector<std::vector<double>>& behavior,
                                              const std::vector<std::string>& metric_names,
                                              const std::vector<double>& ages,
                                              const AssociationOptions& opts);

}  // namespace voxmim
