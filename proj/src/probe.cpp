#include "voxmim/probe.hpp"

#include <cmath>
#include <stdexcept>

#include "voxmim/optim.hpp"
#include "voxmim/tape.hpp"

namespace voxmim {

ProbeResult linear_probe(const DMatrix& x_train, const std::vector<int>& y_train,
                         const DMatrix& x_test, const std::vector<int>& y_test,
                         const ProbeOptions& opts) {
  if (static_cast<size_t>(x_train.rows) != y_train.size())
    throw std::invalid_argument("linear_probe: train size mismatch");
  if (static_cast<size_t>(x_test.rows) != y_test.size())
    throw std::invalid_argument("linear_probe: test size mismatch");
  if (x_train.cols != x_test.cols)
    throw std::invalid_argument("linear_probe: feature dim mismatch");
  const int n = x_train.rows, f = x_train.cols;

  // train-split standardization; a feature matrix with no variance anywhere
  // cannot carry a signal
  std::vector<double> mean(static_cast<size_t>(f), 0.0), sd(static_cast<size_t>(f), 0.0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < f; ++c) mean[static_cast<size_t>(c)] += x_train.at(r, c);
  for (auto& m : mean) m /= n;
  bool any_variance = false;
  for (int c = 0; c < f; ++c) {
    double var = 0;
    for (int r = 0; r < n; ++r)
      var += (x_train.at(r, c) - mean[static_cast<size_t>(c)]) *
             (x_train.at(r, c) - mean[static_cast<size_t>(c)]);
    var /= n;
    sd[static_cast<size_t>(c)] = var > 0 ? std::sqrt(var) : 1.0;
    any_variance = any_variance || var > 0;
  }
  if (!any_variance)
    throw std::invalid_argument("linear_probe: degenerate features, zero variance everywhere");

  auto standardized = [&](const DMatrix& src) {
    std::vector<double> out(static_cast<size_t>(src.rows) * f);
    for (int r = 0; r < src.rows; ++r)
      for (int c = 0; c < f; ++c)
        out[static_cast<size_t>(r) * f + c] =
            (src.at(r, c) - mean[static_cast<size_t>(c)]) / sd[static_cast<size_t>(c)];
    return out;
  };
  const std::vector<double> xs = standardized(x_train);
  std::vector<double> targets(static_cast<size_t>(n));
  for (int r = 0; r < n; ++r) targets[static_cast<size_t>(r)] = y_train[static_cast<size_t>(r)];

  Param<double> w({f, 1});
  Param<double> b({1});
  AdamW<double>::Config oc;
  oc.weight_decay = 0.0;  // the L2 term sits in the loss, not decoupled decay
  AdamW<double> opt({&w, &b}, oc);
  for (int it = 0; it < opts.iterations; ++it) {
    Tape<double> t;
    Tensor<double> X = t.constant({n, f}, xs);
    Tensor<double> logits = t.add(t.matmul(X, t.leaf(w)), t.leaf(b));
    Tensor<double> p = t.clamp(t.sigmoid(logits), 1e-9, 1.0 - 1e-9);
    Tensor<double> y = t.constant({n, 1}, targets);
    // mean cross entropy: -(y log p + (1-y) log(1-p))
    Tensor<double> ll = t.add(t.mul(y, t.log(p)),
                              t.mul(t.add_scalar(t.scale(y, -1.0), 1.0),
                                    t.log(t.add_scalar(t.scale(p, -1.0), 1.0))));
    Tensor<double> loss = t.scale(t.mean(ll), -1.0);
    loss = t.add(loss, t.scale(t.sum(t.mul(t.leaf(w), t.leaf(w))), opts.l2));
    w.zero_grad();
    b.zero_grad();
    t.backward(loss);
    opt.step(opts.lr);
  }

  ProbeResult res;
  const std::vector<double> xt = standardized(x_test);
  res.test_scores.resize(static_cast<size_t>(x_test.rows));
  res.test_predictions.resize(static_cast<size_t>(x_test.rows));
  for (int r = 0; r < x_test.rows; ++r) {
    double z = b.value[0];
    for (int c = 0; c < f; ++c) z += xt[static_cast<size_t>(r) * f + c] * w.value[static_cast<size_t>(c)];
    const double p = 1.0 / (1.0 + std::exp(-z));
    res.test_scores[static_cast<size_t>(r)] = p;
    res.test_predictions[static_cast<size_t>(r)] = p >= 0.5 ? 1 : 0;
  }
  res.report = classification_metrics(res.test_predictions, y_test);
  res.report.auc = auc_score(res.test_scores, y_test);
  return res;
}

}  // namespace voxmim
