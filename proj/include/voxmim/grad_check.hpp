#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "voxmim/tape.hpp"

namespace voxmim {

// Central-difference verification oracle. make_loss must rebuild the same
// scalar loss on any tape it is handed; it is evaluated in double precision.
// Returns the max over all parameter elements of
//   |analytic - fd| / max(|analytic|, |fd|, 1e-12).
//
// The estimate Richardson-combines central differences at steps 10*eps and
// 5*eps: the wider stencil keeps the round-off of the loss evaluation well
// below the smallest honest gradients while the extrapolation cancels the
// h^2 truncation term.
template <typename LossFn>
double grad_check(LossFn&& make_loss, const std::vector<Param<double>*>& params,
                  double eps = 1e-5) {
  auto eval = [&](bool with_grad) {
    Tape<double> tape;
    tape.set_grad_enabled(with_grad);
    Tensor<double> loss = make_loss(tape);
    const double v = loss.item();
    if (with_grad) tape.backward(loss);
    return v;
  };

  for (auto* p : params) p->zero_grad();
  const double v1 = eval(true);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  const double v2 = eval(false);
  if (v1 != v2) throw std::runtime_error("grad_check: loss function is not deterministic");

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param<double>& p = *params[pi];
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      auto central = [&](double h) {
        p.value[i] = orig + h;
        const double up = eval(false);
        p.value[i] = orig - h;
        const double dn = eval(false);
        p.value[i] = orig;
        return (up - dn) / (2.0 * h);
      };
      const double h = 10.0 * eps;
      const double fd = (4.0 * central(0.5 * h) - central(h)) / 3.0;
      const double an = analytic[pi][i];
      const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-12});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace voxmim
