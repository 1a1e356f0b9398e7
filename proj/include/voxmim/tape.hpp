#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "voxmim/kernels/kernels.hpp"
#include "voxmim/shape.hpp"

namespace voxmim {

template <typename T>
class Tape;

// Named trainable parameter. Value and accumulated gradient live here,
// outside any tape, so one parameter can be shared by many forward passes.
template <typename T>
struct Param {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(Shape s, T fill = T(0))
      : shape(std::move(s)),
        value(static_cast<size_t>(numel(shape)), fill),
        grad(static_cast<size_t>(numel(shape)), T(0)) {}

  size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

// Handle into a tape; cheap to copy.
template <typename T>
struct Tensor {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const;
  const std::vector<T>& data() const;
  const std::vector<T>& grad() const;
  T item() const;
};

// Per-layer attention capture: head-averaged pre-softmax scaled scores plus
// the per-head post-softmax maps.
template <typename T>
struct AttnCapture {
  int n = 0;
  std::vector<T> raw_mean;            // n*n
  std::vector<std::vector<T>> post;   // heads, each n*n
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void reset() {
    vals_.clear();
    ops_.clear();
    leaf_of_.clear();
    bindings_.clear();
  }

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }
  size_t op_count() const { return ops_.size(); }
  size_t value_count() const { return vals_.size(); }

  // ---- construction ----------------------------------------------------

  Tensor<T> constant(Shape shape, std::vector<T> data) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
      fail("constant", "data size " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    return wrap(new_value(std::move(shape), std::move(data), false));
  }

  Tensor<T> scalar(T v) { return constant({}, {v}); }

  Tensor<T> zeros(Shape shape) {
    std::vector<T> d(static_cast<size_t>(numel(shape)), T(0));
    return constant(std::move(shape), std::move(d));
  }

  // Leaf bound to a parameter; memoized so each param has one leaf per tape.
  Tensor<T> leaf(Param<T>& p) {
    auto it = leaf_of_.find(&p);
    if (it != leaf_of_.end()) return wrap(it->second);
    int id = new_value(p.shape, p.value, grad_enabled_);
    vals_[id].param = &p;
    leaf_of_.emplace(&p, id);
    if (grad_enabled_) bindings_.push_back({&p, id});
    return wrap(id);
  }

  // ---- primitives --------------------------------------------------------

  Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
    check_mine("matmul", a);
    check_mine("matmul", b);
    const Shape& sa = shape_of(a);
    const Shape& sb = shape_of(b);
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
      fail("matmul", "shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    const int m = sa[0], k = sa[1], n = sb[1];
    int out = new_value({m, n}, {}, needs(a, b));
    alloc(out);
    kernels::table<T>().gemm_nn(m, k, n, dat(a), dat(b), mut(out), false);
    if (vals_[out].needs_grad) {
      record("matmul", out, [this, a = a.id, b = b.id, out, m, k, n] {
        const T* g = grd(out);
        if (vals_[a].needs_grad)
          kernels::table<T>().gemm_nt(m, n, k, g, dat(b), grad_buf(a), true);
        if (vals_[b].needs_grad)
          kernels::table<T>().gemm_tn(k, m, n, dat(a), g, grad_buf(b), true);
      });
    }
    return wrap(out);
  }

  // elementwise when shapes match; otherwise b must be a vector matching the
  // last axis of a (row-broadcast bias add)
  Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    check_mine("add", a);
    check_mine("add", b);
    const Shape& sa = shape_of(a);
    const Shape& sb = shape_of(b);
    if (sa == sb) {
      int out = new_value(sa, {}, needs(a, b));
      alloc(out);
      kernels::table<T>().add(dat(a), dat(b), mut(out), len(a));
      if (vals_[out].needs_grad) {
        record("add", out, [this, a = a.id, b = b.id, out] {
          const T* g = grd(out);
          const size_t n = vals_[out].data.size();
          if (vals_[a].needs_grad) kernels::table<T>().axpy(T(1), g, grad_buf(a), n);
          if (vals_[b].needs_grad) kernels::table<T>().axpy(T(1), g, grad_buf(b), n);
        });
      }
      return wrap(out);
    }
    if (sb.size() == 1 && !sa.empty() && sa.back() == sb[0]) {
      const int d = sb[0];
      const int64_t rows = numel(sa) / d;
      int out = new_value(sa, {}, needs(a, b));
      alloc(out);
      const T* pa = dat(a);
      const T* pb = dat(b);
      T* po = mut(out);
      for (int64_t r = 0; r < rows; ++r)
        kernels::table<T>().add(pa + r * d, pb, po + r * d, static_cast<size_t>(d));
      if (vals_[out].needs_grad) {
        record("add", out, [this, a = a.id, b = b.id, out, rows, d] {
          const T* g = grd(out);
          if (vals_[a].needs_grad)
            kernels::table<T>().axpy(T(1), g, grad_buf(a), static_cast<size_t>(rows) * d);
          if (vals_[b].needs_grad) {
            T* gb = grad_buf(b);
            for (int64_t r = 0; r < rows; ++r)
              kernels::table<T>().axpy(T(1), g + r * d, gb, static_cast<size_t>(d));
          }
        });
      }
      return wrap(out);
    }
    fail("add", "shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    return {};
  }

  Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
    check_same_shape("sub", a, b);
    int out = new_value(shape_of(a), {}, needs(a, b));
    alloc(out);
    kernels::table<T>().sub(dat(a), dat(b), mut(out), len(a));
    if (vals_[out].needs_grad) {
      record("sub", out, [this, a = a.id, b = b.id, out] {
        const T* g = grd(out);
        const size_t n = vals_[out].data.size();
        if (vals_[a].needs_grad) kernels::table<T>().axpy(T(1), g, grad_buf(a), n);
        if (vals_[b].needs_grad) kernels::table<T>().axpy(T(-1), g, grad_buf(b), n);
      });
    }
    return wrap(out);
  }

  Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
    check_same_shape("mul", a, b);
    int out = new_value(shape_of(a), {}, needs(a, b));
    alloc(out);
    kernels::table<T>().mul(dat(a), dat(b), mut(out), len(a));
    if (vals_[out].needs_grad) {
      record("mul", out, [this, a = a.id, b = b.id, out] {
        const T* g = grd(out);
        const size_t n = vals_[out].data.size();
        if (vals_[a].needs_grad) {
          T* ga = grad_buf(a);
          const T* pb = dat(b);
          for (size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
        }
        if (vals_[b].needs_grad) {
          T* gb = grad_buf(b);
          const T* pa = dat(a);
          for (size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
        }
      });
    }
    return wrap(out);
  }

  Tensor<T> scale(Tensor<T> a, T s) {
    check_mine("scale", a);
    int out = new_value(shape_of(a), {}, needs(a));
    alloc(out);
    kernels::table<T>().scale(dat(a), s, mut(out), len(a));
    if (vals_[out].needs_grad) {
      record("scale", out, [this, a = a.id, out, s] {
        if (vals_[a].needs_grad)
          kernels::table<T>().axpy(s, grd(out), grad_buf(a), vals_[out].data.size());
      });
    }
    return wrap(out);
  }

  Tensor<T> add_scalar(Tensor<T> a, T c) {
    check_mine("add_scalar", a);
    int out = new_value(shape_of(a), {}, needs(a));
    alloc(out);
    const T* pa = dat(a);
    T* po = mut(out);
    const size_t n = len(a);
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] + c;
    if (vals_[out].needs_grad) {
      record("add_scalar", out, [this, a = a.id, out] {
        if (vals_[a].needs_grad)
          kernels::table<T>().axpy(T(1), grd(out), grad_buf(a), vals_[out].data.size());
      });
    }
    return wrap(out);
  }

  Tensor<T> transpose(Tensor<T> a) {
    check_mine("transpose", a);
    const Shape& s = shape_of(a);
    if (s.size() != 2) fail("transpose", "expected rank-2, got " + shape_str(s));
    const int m = s[0], n = s[1];
    int out = new_value({n, m}, {}, needs(a));
    alloc(out);
    const T* pa = dat(a);
    T* po = mut(out);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) po[static_cast<size_t>(j) * m + i] = pa[static_cast<size_t>(i) * n + j];
    if (vals_[out].needs_grad) {
      record("transpose", out, [this, a = a.id, out, m, n] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        T* ga = grad_buf(a);
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < m; ++i)
            ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
      });
    }
    return wrap(out);
  }

  // concatenation along axis 0; trailing dims must agree
  Tensor<T> concat0(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) fail("concat", "no inputs");
    Shape tail(shape_of(parts[0]).begin() + (shape_of(parts[0]).empty() ? 0 : 1),
               shape_of(parts[0]).end());
    int64_t total = 0;
    bool ng = false;
    for (const auto& p : parts) {
      check_mine("concat", p);
      const Shape& s = shape_of(p);
      if (s.empty()) fail("concat", "scalar input not allowed");
      Shape t(s.begin() + 1, s.end());
      if (t != tail)
        fail("concat", "trailing shape mismatch " + shape_str(shape_of(parts[0])) + " vs " +
                           shape_str(s));
      total += s[0];
      ng = ng || vals_[p.id].needs_grad;
    }
    Shape os = shape_of(parts[0]);
    os[0] = static_cast<int>(total);
    int out = new_value(os, {}, ng && grad_enabled_);
    alloc(out);
    T* po = mut(out);
    int64_t off = 0;
    std::vector<int> ids;
    std::vector<int64_t> sizes;
    for (const auto& p : parts) {
      const auto& v = vals_[p.id];
      std::copy(v.data.begin(), v.data.end(), po + off);
      ids.push_back(p.id);
      sizes.push_back(static_cast<int64_t>(v.data.size()));
      off += static_cast<int64_t>(v.data.size());
    }
    if (vals_[out].needs_grad) {
      record("concat", out, [this, ids, sizes, out] {
        const T* g = grd(out);
        int64_t offset = 0;
        for (size_t i = 0; i < ids.size(); ++i) {
          if (vals_[ids[i]].needs_grad)
            kernels::table<T>().axpy(T(1), g + offset, grad_buf(ids[i]),
                                     static_cast<size_t>(sizes[i]));
          offset += sizes[i];
        }
      });
    }
    return wrap(out);
  }

  // row gather along axis 0 (elements for rank-1 inputs); duplicates allowed
  Tensor<T> gather0(Tensor<T> a, std::vector<int> idx) {
    check_mine("gather", a);
    const Shape& s = shape_of(a);
    if (s.empty()) fail("gather", "scalar input not allowed");
    const int64_t stride = numel(s) / s[0];
    for (int i : idx)
      if (i < 0 || i >= s[0])
        fail("gather", "index " + std::to_string(i) + " out of range for " + shape_str(s));
    Shape os = s;
    os[0] = static_cast<int>(idx.size());
    int out = new_value(os, {}, needs(a));
    alloc(out);
    const T* pa = dat(a);
    T* po = mut(out);
    for (size_t r = 0; r < idx.size(); ++r)
      std::copy(pa + idx[r] * stride, pa + (idx[r] + 1) * stride, po + r * stride);
    if (vals_[out].needs_grad) {
      record("gather", out, [this, a = a.id, out, idx = std::move(idx), stride] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        T* ga = grad_buf(a);
        for (size_t r = 0; r < idx.size(); ++r)
          kernels::table<T>().axpy(T(1), g + r * stride, ga + idx[r] * stride,
                                   static_cast<size_t>(stride));
      });
    }
    return wrap(out);
  }

  // rows of a placed at positions idx (unique) in a zero output with out_rows rows
  Tensor<T> scatter0(Tensor<T> a, std::vector<int> idx, int out_rows) {
    check_mine("scatter", a);
    const Shape& s = shape_of(a);
    if (s.empty()) fail("scatter", "scalar input not allowed");
    if (static_cast<size_t>(s[0]) != idx.size())
      fail("scatter", "row count " + shape_str(s) + " does not match " +
                          std::to_string(idx.size()) + " indices");
    std::vector<char> seen(static_cast<size_t>(out_rows), 0);
    for (int i : idx) {
      if (i < 0 || i >= out_rows)
        fail("scatter", "index " + std::to_string(i) + " out of range for " +
                            std::to_string(out_rows) + " rows");
      if (seen[i]++) fail("scatter", "duplicate index " + std::to_string(i));
    }
    const int64_t stride = numel(s) / s[0];
    Shape os = s;
    os[0] = out_rows;
    int out = new_value(os, {}, needs(a));
    auto& ov = vals_[out];
    ov.data.assign(static_cast<size_t>(numel(os)), T(0));
    const T* pa = dat(a);
    for (size_t r = 0; r < idx.size(); ++r)
      std::copy(pa + r * stride, pa + (r + 1) * stride, ov.data.data() + idx[r] * stride);
    if (vals_[out].needs_grad) {
      record("scatter", out, [this, a = a.id, out, idx = std::move(idx), stride] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        T* ga = grad_buf(a);
        for (size_t r = 0; r < idx.size(); ++r)
          kernels::table<T>().axpy(T(1), g + idx[r] * stride, ga + r * stride,
                                   static_cast<size_t>(stride));
      });
    }
    return wrap(out);
  }

  Tensor<T> reshape(Tensor<T> a, Shape shape) {
    check_mine("reshape", a);
    if (numel(shape) != numel(shape_of(a)))
      fail("reshape", "shape mismatch " + shape_str(shape_of(a)) + " vs " + shape_str(shape));
    int out = new_value(std::move(shape), vals_[a.id].data, needs(a));
    if (vals_[out].needs_grad) {
      record("reshape", out, [this, a = a.id, out] {
        if (vals_[a].needs_grad)
          kernels::table<T>().axpy(T(1), grd(out), grad_buf(a), vals_[out].data.size());
      });
    }
    return wrap(out);
  }

  Tensor<T> sum(Tensor<T> a) { return reduce(a, false); }
  Tensor<T> mean(Tensor<T> a) { return reduce(a, true); }

  // mean over axis 0: (n, d) -> (d)
  Tensor<T> mean0(Tensor<T> a) {
    check_mine("mean0", a);
    const Shape& s = shape_of(a);
    if (s.size() != 2) fail("mean0", "expected rank-2, got " + shape_str(s));
    const int n = s[0], d = s[1];
    int out = new_value({d}, {}, needs(a));
    auto& ov = vals_[out];
    ov.data.assign(static_cast<size_t>(d), T(0));
    const T* pa = dat(a);
    for (int r = 0; r < n; ++r)
      kernels::table<T>().axpy(T(1), pa + static_cast<size_t>(r) * d, ov.data.data(),
                               static_cast<size_t>(d));
    kernels::table<T>().scale(ov.data.data(), T(1) / static_cast<T>(n), ov.data.data(),
                              static_cast<size_t>(d));
    if (vals_[out].needs_grad) {
      record("mean0", out, [this, a = a.id, out, n, d] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        T* ga = grad_buf(a);
        const T inv = T(1) / static_cast<T>(n);
        for (int r = 0; r < n; ++r)
          kernels::table<T>().axpy(inv, g, ga + static_cast<size_t>(r) * d,
                                   static_cast<size_t>(d));
      });
    }
    return wrap(out);
  }

  // replicate a vector (d) into (rows, d)
  Tensor<T> broadcast0(Tensor<T> a, int rows) {
    check_mine("broadcast0", a);
    const Shape& s = shape_of(a);
    if (s.size() != 1) fail("broadcast0", "expected rank-1, got " + shape_str(s));
    const int d = s[0];
    int out = new_value({rows, d}, {}, needs(a));
    alloc(out);
    const T* pa = dat(a);
    T* po = mut(out);
    for (int r = 0; r < rows; ++r) std::copy(pa, pa + d, po + static_cast<size_t>(r) * d);
    if (vals_[out].needs_grad) {
      record("broadcast0", out, [this, a = a.id, out, rows, d] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        T* ga = grad_buf(a);
        for (int r = 0; r < rows; ++r)
          kernels::table<T>().axpy(T(1), g + static_cast<size_t>(r) * d, ga,
                                   static_cast<size_t>(d));
      });
    }
    return wrap(out);
  }

  // ---- activations -------------------------------------------------------

  Tensor<T> softmax_rows(Tensor<T> a) {
    check_mine("softmax", a);
    check_finite("softmax", a);
    const Shape& s = shape_of(a);
    const int d = last_dim(s);
    const int64_t rows = row_count(s);
    int out = new_value(s, {}, needs(a));
    alloc(out);
    const T* pa = dat(a);
    T* po = mut(out);
    for (int64_t r = 0; r < rows; ++r) softmax_row(pa + r * d, po + r * d, d);
    if (vals_[out].needs_grad) {
      record("softmax", out, [this, a = a.id, out, rows, d] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        const T* p = dat(out);
        T* ga = grad_buf(a);
        for (int64_t r = 0; r < rows; ++r) {
          const T* gr = g + r * d;
          const T* pr = p + r * d;
          const T dotv = kernels::table<T>().dot(gr, pr, static_cast<size_t>(d));
          T* gar = ga + r * d;
          for (int j = 0; j < d; ++j) gar[j] += pr[j] * (gr[j] - dotv);
        }
      });
    }
    return wrap(out);
  }

  Tensor<T> sigmoid(Tensor<T> a) {
    check_mine("sigmoid", a);
    check_finite("sigmoid", a);
    int out = new_value(shape_of(a), {}, needs(a));
    alloc(out);
    const size_t n = len(a);
    // sigmoid(x) = 0.5 * (1 + tanh(x/2)), numerically stable at both tails
    std::vector<T> half(n);
    kernels::table<T>().scale(dat(a), T(0.5), half.data(), n);
    kernels::table<T>().vtanh(half.data(), half.data(), n);
    T* po = mut(out);
    for (size_t i = 0; i < n; ++i) po[i] = T(0.5) * (T(1) + half[i]);
    if (vals_[out].needs_grad) {
      record("sigmoid", out, [this, a = a.id, out] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        const T* y = dat(out);
        T* ga = grad_buf(a);
        const size_t n2 = vals_[out].data.size();
        for (size_t i = 0; i < n2; ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
      });
    }
    return wrap(out);
  }

  Tensor<T> clamp(Tensor<T> a, T lo, T hi) {
    check_mine("clamp", a);
    int out = new_value(shape_of(a), {}, needs(a));
    alloc(out);
    const T* pa = dat(a);
    T* po = mut(out);
    const size_t n = len(a);
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] < lo ? lo : (pa[i] > hi ? hi : pa[i]);
    if (vals_[out].needs_grad) {
      record("clamp", out, [this, a = a.id, out, lo, hi] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        const T* x = dat(a);
        T* ga = grad_buf(a);
        const size_t n2 = vals_[out].data.size();
        for (size_t i = 0; i < n2; ++i)
          if (x[i] > lo && x[i] < hi) ga[i] += g[i];
      });
    }
    return wrap(out);
  }

  Tensor<T> log(Tensor<T> a) {
    check_mine("log", a);
    int out = new_value(shape_of(a), {}, needs(a));
    alloc(out);
    const T* pa = dat(a);
    T* po = mut(out);
    const size_t n = len(a);
    for (size_t i = 0; i < n; ++i) {
      if (!(pa[i] > T(0))) fail("log", "non-positive input " + std::to_string(pa[i]));
      po[i] = std::log(pa[i]);
    }
    if (vals_[out].needs_grad) {
      record("log", out, [this, a = a.id, out] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        const T* x = dat(a);
        T* ga = grad_buf(a);
        const size_t n2 = vals_[out].data.size();
        for (size_t i = 0; i < n2; ++i) ga[i] += g[i] / x[i];
      });
    }
    return wrap(out);
  }

  // tanh-approximation gelu
  Tensor<T> gelu(Tensor<T> a) {
    check_mine("gelu", a);
    check_finite("gelu", a);
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    int out = new_value(shape_of(a), {}, needs(a));
    alloc(out);
    const size_t n = len(a);
    const T* x = dat(a);
    std::vector<T> u(n);
    for (size_t i = 0; i < n; ++i) u[i] = static_cast<T>(kC) * (x[i] + static_cast<T>(kA) * x[i] * x[i] * x[i]);
    kernels::table<T>().vtanh(u.data(), u.data(), n);  // u now holds tanh(u)
    T* po = mut(out);
    for (size_t i = 0; i < n; ++i) po[i] = T(0.5) * x[i] * (T(1) + u[i]);
    if (vals_[out].needs_grad) {
      record("gelu", out, [this, a = a.id, out, t = std::move(u)] {
        if (!vals_[a].needs_grad) return;
        const T* g = grd(out);
        const T* x2 = dat(a);
        T* ga = grad_buf(a);
        const size_t n2 = vals_[out].data.size();
        for (size_t i = 0; i < n2; ++i) {
          const T th = t[i];
          const T du = static_cast<T>(kC) * (T(1) + T(3) * static_cast<T>(kA) * x2[i] * x2[i]);
          ga[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * x2[i] * (T(1) - th * th) * du);
        }
      });
    }
    return wrap(out);
  }

  // per-row layer norm over the last axis, population variance
  Tensor<T> layer_norm(Tensor<T> a, Tensor<T> gain, Tensor<T> bias, T eps = T(1e-5)) {
    check_mine("layer_norm", a);
    check_mine("layer_norm", gain);
    check_mine("layer_norm", bias);
    check_finite("layer_norm", a);
    const Shape& s = shape_of(a);
    const int d = last_dim(s);
    if (d < 2) fail("layer_norm", "last axis must be >= 2, got " + shape_str(s));
    if (shape_of(gain) != Shape{d} || shape_of(bias) != Shape{d})
      fail("layer_norm", "gain/bias must be " + shape_str({d}));
    const int64_t rows = row_count(s);
    const int64_t total = numel(s);  // before new_value: s references tape storage
    int out = new_value(s, {}, grad_enabled_ && (needs(a) || needs(gain) || needs(bias)));
    alloc(out);
    std::vector<T> xhat(static_cast<size_t>(total));
    std::vector<T> inv_std(static_cast<size_t>(rows));
    const T* px = dat(a);
    const T* pg = dat(gain);
    const T* pb = dat(bias);
    T* po = mut(out);
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = px + r * d;
      T mean = kernels::table<T>().sum(xr, static_cast<size_t>(d)) / static_cast<T>(d);
      T var = 0;
      for (int j = 0; j < d; ++j) {
        const T c = xr[j] - mean;
        var += c * c;
      }
      var /= static_cast<T>(d);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<size_t>(r)] = is;
      T* hr = xhat.data() + r * d;
      T* yr = po + r * d;
      for (int j = 0; j < d; ++j) {
        hr[j] = (xr[j] - mean) * is;
        yr[j] = hr[j] * pg[j] + pb[j];
      }
    }
    if (vals_[out].needs_grad) {
      record("layer_norm", out,
             [this, a = a.id, gi = gain.id, bi = bias.id, out, rows, d, xh = std::move(xhat),
              istd = std::move(inv_std)] {
               const T* g = grd(out);
               const T* pg2 = dat(gi);
               for (int64_t r = 0; r < rows; ++r) {
                 const T* gr = g + r * d;
                 const T* hr = xh.data() + r * d;
                 if (vals_[a].needs_grad) {
                   T* ga = grad_buf(a) + r * d;
                   T sum_dxhat = 0, sum_dxhat_h = 0;
                   for (int j = 0; j < d; ++j) {
                     const T dxh = gr[j] * pg2[j];
                     sum_dxhat += dxh;
                     sum_dxhat_h += dxh * hr[j];
                   }
                   const T m1 = sum_dxhat / static_cast<T>(d);
                   const T m2 = sum_dxhat_h / static_cast<T>(d);
                   const T is = istd[static_cast<size_t>(r)];
                   for (int j = 0; j < d; ++j)
                     ga[j] += is * (gr[j] * pg2[j] - m1 - hr[j] * m2);
                 }
                 if (vals_[gi].needs_grad) {
                   T* gg = grad_buf(gi);
                   for (int j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
                 }
                 if (vals_[bi].needs_grad)
                   kernels::table<T>().axpy(T(1), gr, grad_buf(bi), static_cast<size_t>(d));
               }
             });
    }
    return wrap(out);
  }

  // fused multi-head self-attention on (n, d) token matrices; optionally
  // captures the head-averaged pre-softmax scaled scores plus per-head
  // post-softmax maps (capture is detached from the graph)
  Tensor<T> attention(Tensor<T> q, Tensor<T> k, Tensor<T> v, int heads,
                      AttnCapture<T>* capture = nullptr) {
    check_mine("attention", q);
    check_mine("attention", k);
    check_mine("attention", v);
    const Shape& s = shape_of(q);
    if (s.size() != 2 || shape_of(k) != s || shape_of(v) != s)
      fail("attention", "q/k/v must share a rank-2 shape, got " + shape_str(s) + " vs " +
                            shape_str(shape_of(k)) + " vs " + shape_str(shape_of(v)));
    const int n = s[0], d = s[1];
    if (heads < 1 || d % heads != 0)
      fail("attention", "dim " + std::to_string(d) + " not divisible by " +
                            std::to_string(heads) + " heads");
    const int dh = d / heads;
    const T alpha = T(1) / std::sqrt(static_cast<T>(dh));

    int out = new_value(s, {}, grad_enabled_ && (needs(q) || needs(k) || needs(v)));
    alloc(out);

    const size_t nn = static_cast<size_t>(n) * n;
    std::vector<T> qh(static_cast<size_t>(n) * d), kh(static_cast<size_t>(n) * d),
        vh(static_cast<size_t>(n) * d);
    std::vector<T> post(static_cast<size_t>(heads) * nn);
    std::vector<T> scores(nn);
    if (capture) {
      capture->n = n;
      capture->raw_mean.assign(nn, T(0));
      capture->post.assign(static_cast<size_t>(heads), std::vector<T>());
    }
    // pack head-contiguous copies of q/k/v once; reused by the backward pass
    for (int h = 0; h < heads; ++h)
      for (int r = 0; r < n; ++r) {
        const size_t src = static_cast<size_t>(r) * d + static_cast<size_t>(h) * dh;
        const size_t dst = static_cast<size_t>(h) * n * dh + static_cast<size_t>(r) * dh;
        std::copy(dat(q) + src, dat(q) + src + dh, qh.data() + dst);
        std::copy(dat(k) + src, dat(k) + src + dh, kh.data() + dst);
        std::copy(dat(v) + src, dat(v) + src + dh, vh.data() + dst);
      }
    T* po = mut(out);
    for (int h = 0; h < heads; ++h) {
      const T* qp = qh.data() + static_cast<size_t>(h) * n * dh;
      const T* kp = kh.data() + static_cast<size_t>(h) * n * dh;
      const T* vp = vh.data() + static_cast<size_t>(h) * n * dh;
      kernels::table<T>().gemm_nt(n, dh, n, qp, kp, scores.data(), false);
      kernels::table<T>().scale(scores.data(), alpha, scores.data(), nn);
      if (capture)
        kernels::table<T>().axpy(T(1) / static_cast<T>(heads), scores.data(),
                                 capture->raw_mean.data(), nn);
      T* pp = post.data() + static_cast<size_t>(h) * nn;
      for (int r = 0; r < n; ++r) softmax_row(scores.data() + static_cast<size_t>(r) * n,
                                              pp + static_cast<size_t>(r) * n, n);
      if (capture) capture->post[static_cast<size_t>(h)].assign(pp, pp + nn);
      // out columns of head h
      std::vector<T> oh(static_cast<size_t>(n) * dh);
      kernels::table<T>().gemm_nn(n, n, dh, pp, vp, oh.data(), false);
      for (int r = 0; r < n; ++r)
        std::copy(oh.data() + static_cast<size_t>(r) * dh, oh.data() + static_cast<size_t>(r + 1) * dh,
                  po + static_cast<size_t>(r) * d + static_cast<size_t>(h) * dh);
    }

    if (vals_[out].needs_grad) {
      record("attention", out,
             [this, q = q.id, k = k.id, v = v.id, out, n, d, dh, heads, alpha,
              qh = std::move(qh), kh = std::move(kh), vh = std::move(vh),
              post = std::move(post)] {
               const T* g = grd(out);
               const size_t nn2 = static_cast<size_t>(n) * n;
               std::vector<T> goh(static_cast<size_t>(n) * dh);
               std::vector<T> dP(nn2), dS(nn2);
               std::vector<T> dqh(static_cast<size_t>(n) * dh), dkh(static_cast<size_t>(n) * dh),
                   dvh(static_cast<size_t>(n) * dh);
               for (int h = 0; h < heads; ++h) {
                 const T* qp = qh.data() + static_cast<size_t>(h) * n * dh;
                 const T* kp = kh.data() + static_cast<size_t>(h) * n * dh;
                 const T* vp = vh.data() + static_cast<size_t>(h) * n * dh;
                 const T* pp = post.data() + static_cast<size_t>(h) * nn2;
                 for (int r = 0; r < n; ++r)
                   std::copy(g + static_cast<size_t>(r) * d + static_cast<size_t>(h) * dh,
                             g + static_cast<size_t>(r) * d + static_cast<size_t>(h) * dh + dh,
                             goh.data() + static_cast<size_t>(r) * dh);
                 // dV = P^T dO ; dP = dO V^T ; dS = alpha * P (dP - rowsum(dP*P))
                 kernels::table<T>().gemm_tn(n, n, dh, pp, goh.data(), dvh.data(), false);
                 kernels::table<T>().gemm_nt(n, dh, n, goh.data(), vp, dP.data(), false);
                 for (int r = 0; r < n; ++r) {
                   const T* dpr = dP.data() + static_cast<size_t>(r) * n;
                   const T* ppr = pp + static_cast<size_t>(r) * n;
                   const T dotv = kernels::table<T>().dot(dpr, ppr, static_cast<size_t>(n));
                   T* dsr = dS.data() + static_cast<size_t>(r) * n;
                   for (int j = 0; j < n; ++j) dsr[j] = alpha * ppr[j] * (dpr[j] - dotv);
                 }
                 kernels::table<T>().gemm_nn(n, n, dh, dS.data(), kp, dqh.data(), false);
                 kernels::table<T>().gemm_tn(n, n, dh, dS.data(), qp, dkh.data(), false);
                 auto scatter_cols = [&](int id, const std::vector<T>& src) {
                   if (!vals_[id].needs_grad) return;
                   T* dst = grad_buf(id);
                   for (int r = 0; r < n; ++r)
                     kernels::table<T>().axpy(
                         T(1), src.data() + static_cast<size_t>(r) * dh,
                         dst + static_cast<size_t>(r) * d + static_cast<size_t>(h) * dh,
                         static_cast<size_t>(dh));
                 };
                 scatter_cols(q, dqh);
                 scatter_cols(k, dkh);
                 scatter_cols(v, dvh);
               }
             });
    }
    return wrap(out);
  }

  // ---- losses --------------------------------------------------------

  Tensor<T> mse(Tensor<T> a, Tensor<T> b) {
    check_same_shape("mse", a, b);
    const size_t n = len(a);
    const T* pa = dat(a);
    const T* pb = dat(b);
    T acc = 0;
    for (size_t i = 0; i < n; ++i) {
      const T dlt = pa[i] - pb[i];
      acc += dlt * dlt;
    }
    int out = new_value({}, {acc / static_cast<T>(n)}, needs(a, b));
    if (vals_[out].needs_grad) {
      record("mse", out, [this, a = a.id, b = b.id, out, n] {
        const T g = grd(out)[0] * T(2) / static_cast<T>(n);
        const T* pa2 = dat(a);
        const T* pb2 = dat(b);
        if (vals_[a].needs_grad) {
          T* ga = grad_buf(a);
          for (size_t i = 0; i < n; ++i) ga[i] += g * (pa2[i] - pb2[i]);
        }
        if (vals_[b].needs_grad) {
          T* gb = grad_buf(b);
          for (size_t i = 0; i < n; ++i) gb[i] -= g * (pa2[i] - pb2[i]);
        }
      });
    }
    return wrap(out);
  }

  // mean negative log-likelihood over rows of logits (n, c) with integer labels
  Tensor<T> cross_entropy(Tensor<T> logits, const std::vector<int>& labels) {
    check_mine("cross_entropy", logits);
    const Shape& s = shape_of(logits);
    if (s.size() != 2 || static_cast<size_t>(s[0]) != labels.size())
      fail("cross_entropy", "logits " + shape_str(s) + " vs " + std::to_string(labels.size()) +
                                " labels");
    const int n = s[0], c = s[1];
    for (int l : labels)
      if (l < 0 || l >= c) fail("cross_entropy", "label " + std::to_string(l) + " outside 0.." +
                                                     std::to_string(c - 1));
    std::vector<T> probs(static_cast<size_t>(n) * c);
    const T* pl = dat(logits);
    T loss = 0;
    for (int r = 0; r < n; ++r) {
      softmax_row(pl + static_cast<size_t>(r) * c, probs.data() + static_cast<size_t>(r) * c, c);
      T p = probs[static_cast<size_t>(r) * c + labels[r]];
      if (p < T(1e-12)) p = T(1e-12);
      loss -= std::log(p);
    }
    int out = new_value({}, {loss / static_cast<T>(n)}, needs(logits));
    if (vals_[out].needs_grad) {
      record("cross_entropy", out,
             [this, li = logits.id, out, labels, n, c, probs = std::move(probs)] {
               if (!vals_[li].needs_grad) return;
               const T g = grd(out)[0] / static_cast<T>(n);
               T* gl = grad_buf(li);
               for (int r = 0; r < n; ++r)
                 for (int j = 0; j < c; ++j)
                   gl[static_cast<size_t>(r) * c + j] +=
                       g * (probs[static_cast<size_t>(r) * c + j] - (labels[r] == j ? T(1) : T(0)));
             });
    }
    return wrap(out);
  }

  // ---- backward ------------------------------------------------------

  // Reverse sweep from a scalar loss. Gradients of bound parameters are
  // accumulated into Param::grad when into_params is true; otherwise they
  // stay on the tape (used by the batch workers, which reduce in a fixed
  // order afterwards).
  void backward(Tensor<T> loss, bool into_params = true) {
    check_mine("backward", loss);
    if (numel(shape_of(loss)) != 1)
      fail("backward", "loss must be scalar, got " + shape_str(shape_of(loss)));
    grad_buf(loss.id)[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (vals_[it->out].grad.empty()) continue;  // does not influence the loss
      it->backward();
    }
    if (into_params) accumulate_params();
  }

  void accumulate_params() {
    for (const auto& [param, id] : bindings_) {
      if (vals_[id].grad.empty()) continue;
      kernels::table<T>().add(param->grad.data(), vals_[id].grad.data(), param->grad.data(),
                              param->grad.size());
    }
  }

  // gradient of a bound parameter leaf on this tape (empty span if untouched)
  const std::vector<T>* param_grad(const Param<T>& p) const {
    auto it = leaf_of_.find(&p);
    if (it == leaf_of_.end()) return nullptr;
    if (vals_[it->second].grad.empty()) return nullptr;
    return &vals_[it->second].grad;
  }

  // ---- introspection ---------------------------------------------------

  const Shape& shape_of(Tensor<T> t) const { return vals_[t.id].shape; }
  const std::vector<T>& data_of(Tensor<T> t) const { return vals_[t.id].data; }
  const std::vector<T>& grad_of(Tensor<T> t) {
    grad_buf(t.id);
    return vals_[t.id].grad;
  }
  const char* op_kind(size_t i) const { return ops_[i].kind; }

 private:
  struct Value {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool needs_grad = false;
    Param<T>* param = nullptr;
  };
  struct OpRec {
    std::function<void()> backward;
    const char* kind;
    int out;
  };

  std::vector<Value> vals_;
  std::vector<OpRec> ops_;
  std::unordered_map<const Param<T>*, int> leaf_of_;
  std::vector<std::pair<Param<T>*, int>> bindings_;
  bool grad_enabled_ = true;

  static void fail(const char* op, const std::string& msg) {
    throw std::invalid_argument(std::string(op) + ": " + msg);
  }

  Tensor<T> wrap(int id) { return Tensor<T>{this, id}; }

  int new_value(Shape shape, std::vector<T> data, bool needs_grad) {
    Value v;
    v.shape = std::move(shape);
    v.data = std::move(data);
    v.needs_grad = needs_grad && grad_enabled_;
    vals_.push_back(std::move(v));
    return static_cast<int>(vals_.size() - 1);
  }

  void alloc(int id) { vals_[id].data.resize(static_cast<size_t>(numel(vals_[id].shape))); }

  template <typename F>
  void record(const char* kind, int out, F&& fn) {
    ops_.push_back(OpRec{std::function<void()>(std::forward<F>(fn)), kind, out});
  }

  bool needs(Tensor<T> a) const { return grad_enabled_ && vals_[a.id].needs_grad; }
  bool needs(Tensor<T> a, Tensor<T> b) const {
    return grad_enabled_ && (vals_[a.id].needs_grad || vals_[b.id].needs_grad);
  }

  const T* dat(Tensor<T> t) const { return vals_[t.id].data.data(); }
  const T* dat(int id) const { return vals_[id].data.data(); }
  T* mut(int id) { return vals_[id].data.data(); }
  const T* grd(int id) { return grad_buf(id); }
  size_t len(Tensor<T> t) const { return vals_[t.id].data.size(); }

  T* grad_buf(int id) {
    auto& v = vals_[id];
    if (v.grad.empty()) v.grad.assign(v.data.size(), T(0));
    return v.grad.data();
  }

  void check_mine(const char* op, Tensor<T> t) const {
    if (t.tape != this || t.id < 0 || t.id >= static_cast<int>(vals_.size()))
      fail(op, "tensor does not belong to this tape");
  }

  void check_same_shape(const char* op, Tensor<T> a, Tensor<T> b) const {
    check_mine(op, a);
    check_mine(op, b);
    if (shape_of(a) != shape_of(b))
      fail(op, "shape mismatch " + shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b)));
  }

  void check_finite(const char* op, Tensor<T> t) const {
    for (T x : vals_[t.id].data)
      if (!std::isfinite(static_cast<double>(x))) fail(op, "non-finite input");
  }

  static void softmax_row(const T* x, T* y, int d) {
    T mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    for (int j = 0; j < d; ++j) y[j] = x[j] - mx;
    kernels::table<T>().vexp(y, y, static_cast<size_t>(d));
    const T s = kernels::table<T>().sum(y, static_cast<size_t>(d));
    kernels::table<T>().scale(y, T(1) / s, y, static_cast<size_t>(d));
  }

  Tensor<T> reduce(Tensor<T> a, bool take_mean) {
    check_mine(take_mean ? "mean" : "sum", a);
    const size_t n = len(a);
    T acc = kernels::table<T>().sum(dat(a), n);
    if (take_mean) acc /= static_cast<T>(n);
    int out = new_value({}, {acc}, needs(a));
    if (vals_[out].needs_grad) {
      record(take_mean ? "mean" : "sum", out, [this, a = a.id, out, n, take_mean] {
        if (!vals_[a].needs_grad) return;
        const T g = take_mean ? grd(out)[0] / static_cast<T>(n) : grd(out)[0];
        T* ga = grad_buf(a);
        for (size_t i = 0; i < n; ++i) ga[i] += g;
      });
    }
    return wrap(out);
  }
};

template <typename T>
const Shape& Tensor<T>::shape() const {
  return tape->shape_of(*this);
}
template <typename T>
const std::vector<T>& Tensor<T>::data() const {
  return tape->data_of(*this);
}
template <typename T>
const std::vector<T>& Tensor<T>::grad() const {
  return tape->grad_of(*this);
}
template <typename T>
T Tensor<T>::item() const {
  return tape->data_of(*this)[0];
}

}  // namespace voxmim
