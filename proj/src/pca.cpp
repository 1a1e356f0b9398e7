#include "voxmim/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace voxmim {

namespace {

// cyclic Jacobi on a symmetric matrix; returns eigenvalues, fills V columns
// with eigenvectors
std::vector<double> jacobi_eigen(DMatrix a, DMatrix& v) {
  const int n = a.rows;
  v = DMatrix(n, n);
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<double> eig(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = a.at(i, i);
  return eig;
}

}  // namespace

PCAResult pca_project(const DMatrix& x, int dims) {
  if (dims < 1 || dims > x.cols)
    throw std::invalid_argument("pca_project: dims " + std::to_string(dims) +
                                " outside 1.." + std::to_string(x.cols));
  if (x.rows < dims)
    throw std::invalid_argument("pca_project: need at least " + std::to_string(dims) +
                                " samples");
  const int n = x.rows, f = x.cols;
  std::vector<double> mean(static_cast<size_t>(f), 0.0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < f; ++c) mean[static_cast<size_t>(c)] += x.at(r, c);
  for (auto& m : mean) m /= n;
  DMatrix cov(f, f);
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < f; ++i) {
      const double di = x.at(r, i) - mean[static_cast<size_t>(i)];
      for (int j = i; j < f; ++j)
        cov.at(i, j) += di * (x.at(r, j) - mean[static_cast<size_t>(j)]);
    }
  for (int i = 0; i < f; ++i)
    for (int j = i; j < f; ++j) {
      cov.at(i, j) /= n;
      cov.at(j, i) = cov.at(i, j);
    }

  DMatrix vecs;
  std::vector<double> eig = jacobi_eigen(cov, vecs);
  std::vector<int> order(static_cast<size_t>(f));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return eig[static_cast<size_t>(a)] > eig[static_cast<size_t>(b)];
  });
  const double total = std::max(1e-300, std::accumulate(eig.begin(), eig.end(), 0.0,
                                                        [](double s, double e) {
                                                          return s + std::max(0.0, e);
                                                        }));

  PCAResult res;
  res.components = DMatrix(dims, f);
  res.projected = DMatrix(n, dims);
  for (int d = 0; d < dims; ++d) {
    const int col = order[static_cast<size_t>(d)];
    // sign convention: largest-magnitude loading positive
    int arg = 0;
    for (int i = 1; i < f; ++i)
      if (std::fabs(vecs.at(i, col)) > std::fabs(vecs.at(arg, col))) arg = i;
    const double sign = vecs.at(arg, col) >= 0 ? 1.0 : -1.0;
    for (int i = 0; i < f; ++i) res.components.at(d, i) = sign * vecs.at(i, col);
    res.explained_ratio.push_back(std::max(0.0, eig[static_cast<size_t>(col)]) / total);
  }
  for (int r = 0; r < n; ++r)
    for (int d = 0; d < dims; ++d) {
      double s = 0;
      for (int c = 0; c < f; ++c)
        s += (x.at(r, c) - mean[static_cast<size_t>(c)]) * res.components.at(d, c);
      res.projected.at(r, d) = s;
    }
  return res;
}

}  // namespace voxmim
