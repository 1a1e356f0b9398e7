#include "voxmim/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace voxmim {

MetricsReport classification_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("classification_metrics: size mismatch");
  MetricsReport r;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument("classification_metrics: labels must be binary");
    if (labels[i] == 1)
      (predictions[i] == 1 ? r.tp : r.fn)++;
    else
      (predictions[i] == 0 ? r.tn : r.fp)++;
  }
  const int total = r.tp + r.tn + r.fp + r.fn;
  if (total > 0) r.acc = static_cast<double>(r.tp + r.tn) / total;
  if (r.tp + r.fn > 0) r.sen = static_cast<double>(r.tp) / (r.tp + r.fn);
  if (r.tn + r.fp > 0) r.spe = static_cast<double>(r.tn) / (r.tn + r.fp);
  return r;
}

std::optional<double> auc_score(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc_score: size mismatch");
  double wins = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return wins / static_cast<double>(pairs);
}

namespace {

// regularized incomplete beta via Lentz continued fraction
double betacf(double a, double b, double x) {
  const double eps = 3e-14, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

double betai(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_two_sided_p(double t, double df) {
  if (df <= 0) throw std::invalid_argument("student_t_two_sided_p: df must be positive");
  return betai(0.5 * df, 0.5, df / (df + t * t));
}

double normal_two_sided_p(double z) { return std::erfc(std::fabs(z) / std::sqrt(2.0)); }

PearsonResult pearson_r(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson_r: size mismatch");
  const size_t n = a.size();
  if (n < 3) throw std::invalid_argument("pearson_r: need at least 3 points");
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double saa = 0, sbb = 0, sab = 0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 || sbb == 0.0)
    throw std::invalid_argument("pearson_r: constant input, correlation undefined");
  PearsonResult res;
  res.r = sab / std::sqrt(saa * sbb);
  res.r = std::clamp(res.r, -1.0, 1.0);
  const double df = static_cast<double>(n) - 2.0;
  if (std::fabs(res.r) >= 1.0) {
    res.p = 0.0;
  } else {
    const double t = res.r * std::sqrt(df / (1.0 - res.r * res.r));
    res.p = student_t_two_sided_p(t, df);
  }
  return res;
}

std::vector<char> fdr_bh(const std::vector<double>& p_values, double q) {
  const size_t m = p_values.size();
  std::vector<char> reject(m, 0);
  if (m == 0) return reject;
  for (double p : p_values)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("fdr_bh: p-values must lie in [0,1]");
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t x, size_t y) { return p_values[x] < p_values[y]; });
  size_t cutoff = 0;  // number of rejections
  for (size_t i = 0; i < m; ++i)
    if (p_values[order[i]] <= q * static_cast<double>(i + 1) / static_cast<double>(m))
      cutoff = i + 1;
  for (size_t i = 0; i < cutoff; ++i) reject[order[i]] = 1;
  return reject;
}

std::vector<int> age_decorrelate_features(const DMatrix& features,
                                          const std::vector<double>& ages, double alpha) {
  if (static_cast<size_t>(features.rows) != ages.size())
    throw std::invalid_argument("age_decorrelate_features: row/age count mismatch");
  std::vector<int> retained;
  const double threshold = alpha / std::max(1, features.cols);
  std::vector<double> col(static_cast<size_t>(features.rows));
  for (int c = 0; c < features.cols; ++c) {
    for (int r = 0; r < features.rows; ++r) col[static_cast<size_t>(r)] = features.at(r, c);
    bool removed = false;
    const double first = col.empty() ? 0.0 : col[0];
    bool constant = true;
    for (double x : col)
      if (x != first) {
        constant = false;
        break;
      }
    if (!constant) {
      // constant features carry no age signal and stay in
      removed = pearson_r(col, ages).p < threshold;
    }
    if (!removed) retained.push_back(c);
  }
  return retained;
}

}  // namespace voxmim
