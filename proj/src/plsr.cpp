#include "voxmim/plsr.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace voxmim {

namespace {

double column_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

PLSRModel plsr_fit(const DMatrix& x, const std::vector<double>& y, int components) {
  if (static_cast<size_t>(x.rows) != y.size())
    throw std::invalid_argument("plsr_fit: row/target count mismatch");
  if (components < 1) throw std::invalid_argument("plsr_fit: need at least one component");
  const int n = x.rows, f = x.cols;
  if (n < 2) throw std::invalid_argument("plsr_fit: need at least two samples");

  PLSRModel m;
  m.components = components;
  m.x_mean.assign(static_cast<size_t>(f), 0.0);
  m.x_std.assign(static_cast<size_t>(f), 1.0);
  for (int c = 0; c < f; ++c) {
    double mean = 0;
    for (int r = 0; r < n; ++r) mean += x.at(r, c);
    mean /= n;
    double var = 0;
    for (int r = 0; r < n; ++r) var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
    var /= n;
    m.x_mean[static_cast<size_t>(c)] = mean;
    m.x_std[static_cast<size_t>(c)] = var > 0 ? std::sqrt(var) : 1.0;
  }
  m.y_mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double yvar = 0;
  for (double v : y) yvar += (v - m.y_mean) * (v - m.y_mean);
  yvar /= n;
  if (yvar <= 0.0) throw std::invalid_argument("plsr_fit: target has zero variance");
  m.y_std = std::sqrt(yvar);

  // standardized working copies, deflated in place
  DMatrix e(n, f);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < f; ++c)
      e.at(r, c) = (x.at(r, c) - m.x_mean[static_cast<size_t>(c)]) / m.x_std[static_cast<size_t>(c)];
  std::vector<double> fres(static_cast<size_t>(n));
  for (int r = 0; r < n; ++r) fres[static_cast<size_t>(r)] = (y[static_cast<size_t>(r)] - m.y_mean) / m.y_std;

  for (int comp = 0; comp < components; ++comp) {
    // NIPALS; with a single response this converges in one pass but keep the
    // iteration with the documented tolerance for robustness
    std::vector<double> u = fres;
    std::vector<double> w(static_cast<size_t>(f), 0.0), t(static_cast<size_t>(n), 0.0);
    std::vector<double> t_prev(static_cast<size_t>(n), 0.0);
    for (int iter = 0; iter < PLSRModel::kMaxIter; ++iter) {
      const double uu = column_dot(u, u);
      if (uu == 0.0) break;
      for (int c = 0; c < f; ++c) {
        double s = 0;
        for (int r = 0; r < n; ++r) s += e.at(r, c) * u[static_cast<size_t>(r)];
        w[static_cast<size_t>(c)] = s / uu;
      }
      const double wn = std::sqrt(column_dot(w, w));
      if (wn == 0.0) break;  // no remaining covariance
      for (auto& v : w) v /= wn;
      for (int r = 0; r < n; ++r) {
        double s = 0;
        for (int c = 0; c < f; ++c) s += e.at(r, c) * w[static_cast<size_t>(c)];
        t[static_cast<size_t>(r)] = s;
      }
      double diff = 0;
      for (int r = 0; r < n; ++r) diff += (t[static_cast<size_t>(r)] - t_prev[static_cast<size_t>(r)]) *
                                          (t[static_cast<size_t>(r)] - t_prev[static_cast<size_t>(r)]);
      if (std::sqrt(diff) < PLSRModel::kTol) break;
      t_prev = t;
      // single-response u update is y itself; the loop re-enters with u = fres
      u = fres;
    }
    const double tt = column_dot(t, t);
    if (tt <= 0.0) {
      m.components = comp;
      break;
    }
    std::vector<double> p(static_cast<size_t>(f), 0.0);
    for (int c = 0; c < f; ++c) {
      double s = 0;
      for (int r = 0; r < n; ++r) s += e.at(r, c) * t[static_cast<size_t>(r)];
      p[static_cast<size_t>(c)] = s / tt;
    }
    double q = 0;
    for (int r = 0; r < n; ++r) q += fres[static_cast<size_t>(r)] * t[static_cast<size_t>(r)];
    q /= tt;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < f; ++c) e.at(r, c) -= t[static_cast<size_t>(r)] * p[static_cast<size_t>(c)];
      fres[static_cast<size_t>(r)] -= q * t[static_cast<size_t>(r)];
    }
    m.w.push_back(std::move(w));
    m.p.push_back(std::move(p));
    m.q.push_back(q);
  }
  if (m.w.empty()) throw std::runtime_error("plsr_fit: no usable components extracted");
  m.components = static_cast<int>(m.w.size());
  return m;
}

std::vector<double> plsr_predict(const PLSRModel& model, const DMatrix& x) {
  if (x.cols != static_cast<int>(model.x_mean.size()))
    throw std::invalid_argument("plsr_predict: feature count mismatch");
  const int n = x.rows, f = x.cols;
  DMatrix e(n, f);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < f; ++c)
      e.at(r, c) = (x.at(r, c) - model.x_mean[static_cast<size_t>(c)]) /
                   model.x_std[static_cast<size_t>(c)];
  std::vector<double> pred(static_cast<size_t>(n), 0.0);
  std::vector<double> t(static_cast<size_t>(n));
  for (int comp = 0; comp < model.components; ++comp) {
    const auto& w = model.w[static_cast<size_t>(comp)];
    const auto& p = model.p[static_cast<size_t>(comp)];
    for (int r = 0; r < n; ++r) {
      double s = 0;
      for (int c = 0; c < f; ++c) s += e.at(r, c) * w[static_cast<size_t>(c)];
      t[static_cast<size_t>(r)] = s;
    }
    for (int r = 0; r < n; ++r) {
      pred[static_cast<size_t>(r)] += model.q[static_cast<size_t>(comp)] * t[static_cast<size_t>(r)];
      for (int c = 0; c < f; ++c)
        e.at(r, c) -= t[static_cast<size_t>(r)] * p[static_cast<size_t>(c)];
    }
  }
  for (auto& v : pred) v = v * model.y_std + model.y_mean;
  return pred;
}

}  // namespace voxmim
