#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxmim {

// row-major double matrix for the analysis pipeline
struct DMatrix {
  int rows = 0, cols = 0;
  std::vector<double> v;

  DMatrix() = default;
  DMatrix(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  DMatrix select_rows(const std::vector<int>& idx) const {
    DMatrix out(static_cast<int>(idx.size()), cols);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < cols; ++c) out.at(static_cast<int>(r), c) = at(idx[r], c);
    return out;
  }
  DMatrix select_cols(const std::vector<int>& idx) const {
    DMatrix out(rows, static_cast<int>(idx.size()));
    for (int r = 0; r < rows; ++r)
      for (size_t c = 0; c < idx.size(); ++c) out.at(r, static_cast<int>(c)) = at(r, idx[c]);
    return out;
  }
};

// confusion-derived report; metrics with an empty denominator stay unset
struct MetricsReport {
  int tp = 0, tn = 0, fp = 0, fn = 0;
  std::optional<double> acc, sen, spe, auc;
};

MetricsReport classification_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels);

// Mann-Whitney rank statistic: P(score_pos > score_neg) + 0.5 P(equal);
// unset when only one class is present
std::optional<double> auc_score(const std::vector<double>& scores,
                                const std::vector<int>& labels);

struct PearsonResult {
  double r = 0.0;
  double p = 1.0;  // two-sided, from the t distribution with n-2 df
};
// throws on length < 3 or a constant input
PearsonResult pearson_r(const std::vector<double>& a, const std::vector<double>& b);

double student_t_two_sided_p(double t, double df);
double normal_two_sided_p(double z);

// Benjamini-Hochberg step-up at level q
std::vector<char> fdr_bh(const std::vector<double>& p_values, double q);

// indices of features whose |r with age| does NOT survive Bonferroni
// (p < alpha / n_features removes the feature); returns retained indices
std::vector<int> age_decorrelate_features(const DMatrix& features,
                                          const std::vector<double>& ages, double alpha);

}  // namespace voxmim
