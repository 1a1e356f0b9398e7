#include "voxmim/association.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "voxmim/phantom.hpp"
#include "voxmim/plsr.hpp"

namespace voxmim {

namespace {

double fisher_z_p(double r, double n_eff) {
  if (n_eff <= 3.0) return 1.0;
  const double rc = std::clamp(r, -0.999999, 0.999999);
  const double z = std::atanh(rc) * std::sqrt(n_eff - 3.0);
  return normal_two_sided_p(z);
}

}  // namespace

std::vector<AssociationEntry> run_association(const std::vector<DMatrix>& features,
                                              const std::vector<std::vector<double>>& behavior,
                                              const std::vector<std::string>& metric_names,
                                              const std::vector<double>& ages,
                                              const AssociationOptions& opts) {
  if (features.empty()) throw std::invalid_argument("run_association: no feature layers");
  const int n = features[0].rows;
  if (static_cast<size_t>(n) != behavior.size() || static_cast<size_t>(n) != ages.size())
    throw std::invalid_argument("run_association: sample count mismatch");
  const size_t n_metrics = metric_names.size();
  for (const auto& row : behavior)
    if (row.size() != n_metrics)
      throw std::invalid_argument("run_association: behavior metric missing from dataset");
  const int n_layers = static_cast<int>(features.size());

  struct Cell {
    std::vector<double> fold_r;        // per (rep, fold)
    std::vector<double> pooled_rep_r;  // per repetition, pooled predictions
    std::vector<double> fold_sizes;
  };
  std::vector<Cell> cells(static_cast<size_t>(n_layers) * n_metrics);

  for (int rep = 0; rep < opts.repetitions; ++rep) {
    const auto folds =
        kfold_split(n, opts.folds, derive_seed(opts.fold_seed, "assoc_rep",
                                               static_cast<uint64_t>(rep)));
    // pooled out-of-fold predictions per (layer, metric) for this repetition
    std::vector<std::vector<double>> pooled_pred(cells.size()),
        pooled_true(cells.size());
    for (const auto& test_idx : folds) {
      std::vector<int> train_idx;
      {
        std::vector<char> is_test(static_cast<size_t>(n), 0);
        for (int i : test_idx) is_test[static_cast<size_t>(i)] = 1;
        for (int i = 0; i < n; ++i)
          if (!is_test[static_cast<size_t>(i)]) train_idx.push_back(i);
      }
      std::vector<double> train_ages, test_ages;
      for (int i : train_idx) train_ages.push_back(ages[static_cast<size_t>(i)]);

      for (int l = 0; l < n_layers; ++l) {
        DMatrix x_train = features[static_cast<size_t>(l)].select_rows(train_idx);
        DMatrix x_test = features[static_cast<size_t>(l)].select_rows(test_idx);
        if (opts.age_control) {
          const auto retained =
              age_decorrelate_features(x_train, train_ages, opts.bonferroni_alpha);
          if (retained.empty()) continue;  // every feature was age-locked
          x_train = x_train.select_cols(retained);
          x_test = x_test.select_cols(retained);
        }
        const int comps = std::min({opts.plsr_components, x_train.cols, x_train.rows - 1});
        for (size_t m = 0; m < n_metrics; ++m) {
          std::vector<double> y_train, y_test;
          for (int i : train_idx) y_train.push_back(behavior[static_cast<size_t>(i)][m]);
          for (int i : test_idx) y_test.push_back(behavior[static_cast<size_t>(i)][m]);
          Cell& cell = cells[static_cast<size_t>(l) * n_metrics + m];
          auto model = plsr_fit(x_train, y_train, comps);
          auto pred = plsr_predict(model, x_test);
          double r = 0.0;  // degenerate folds (constant prediction) score zero
          try {
            r = pearson_r(pred, y_test).r;
          } catch (const std::invalid_argument&) {
          }
          cell.fold_r.push_back(r);
          cell.fold_sizes.push_back(static_cast<double>(test_idx.size()));
          auto& pp = pooled_pred[static_cast<size_t>(l) * n_metrics + m];
          auto& pt = pooled_true[static_cast<size_t>(l) * n_metrics + m];
          pp.insert(pp.end(), pred.begin(), pred.end());
          pt.insert(pt.end(), y_test.begin(), y_test.end());
        }
      }
    }
    for (size_t ci = 0; ci < cells.size(); ++ci) {
      if (pooled_pred[ci].empty()) continue;
      double r = 0.0;
      try {
        r = pearson_r(pooled_pred[ci], pooled_true[ci]).r;
      } catch (const std::invalid_argument&) {
      }
      cells[ci].pooled_rep_r.push_back(r);
    }
  }

  std::vector<AssociationEntry> table;
  std::vector<double> ps;
  for (int l = 0; l < n_layers; ++l)
    for (size_t m = 0; m < n_metrics; ++m) {
      const Cell& cell = cells[static_cast<size_t>(l) * n_metrics + m];
      AssociationEntry e;
      e.layer = l;
      e.metric = metric_names[m];
      const auto& rs = opts.pooled_r ? cell.pooled_rep_r : cell.fold_r;
      if (rs.empty()) {
        e.mean_r = 0.0;
        e.std_r = 0.0;
        e.p = 1.0;
      } else {
        double mean = 0;
        for (double r : rs) mean += r;
        mean /= static_cast<double>(rs.size());
        double var = 0;
        for (double r : rs) var += (r - mean) * (r - mean);
        var /= static_cast<double>(rs.size());
        e.mean_r = mean;
        e.std_r = std::sqrt(var);
        // significance of the average correlation at the evaluation sample
        // size (median fold size, or the pooled size in pooled mode)
        double n_eff;
        if (opts.pooled_r) {
          n_eff = static_cast<double>(n);
        } else {
          std::vector<double> sizes = cell.fold_sizes;
          std::nth_element(sizes.begin(), sizes.begin() + sizes.size() / 2, sizes.end());
          n_eff = sizes[sizes.size() / 2];
        }
        e.p = fisher_z_p(mean, n_eff);
      }
      ps.push_back(e.p);
      table.push_back(std::move(e));
    }
  const auto reject = fdr_bh(ps, opts.fdr_q);
  for (size_t i = 0; i < table.size(); ++i) table[i].fdr_significant = reject[i] != 0;
  return table;
}

}  // namespace voxmim
