#pragma once

#include <string>

#include "voxmim/optim.hpp"
#include "voxmim/rng.hpp"
#include "voxmim/tape.hpp"

namespace voxmim {

template <typename T>
void init_trunc_normal(Param<T>& p, Rng& rng, double stddev = 0.02) {
  for (auto& v : p.value) v = static_cast<T>(rng.trunc_normal(stddev));
}

template <typename T>
struct Linear {
  Param<T> w;  // (in, out)
  Param<T> b;  // (out)
  bool has_bias = true;

  void init(int in, int out, Rng& rng, double stddev = 0.02, bool with_bias = true) {
    w = Param<T>({in, out});
    has_bias = with_bias;
    if (has_bias) b = Param<T>({out});
    init_trunc_normal(w, rng, stddev);
  }
  void reg(ParamRegistry<T>& r, const std::string& prefix) {
    r.add(w, prefix + ".w");
    if (has_bias) r.add(b, prefix + ".b");
  }
  Tensor<T> operator()(Tape<T>& t, Tensor<T> x) {
    Tensor<T> y = t.matmul(x, t.leaf(w));
    return has_bias ? t.add(y, t.leaf(b)) : y;
  }
};

// pre-norm MSA + MLP block
template <typename T>
struct TransformerBlock {
  int heads = 1;
  Param<T> ln1_g, ln1_b, ln2_g, ln2_b;
  Linear<T> wq, wk, wv, proj, fc1, fc2;

  // fc2_bias=false drops the block's trailing additive bias; the branch-A
  // decoder runs twice and subtracts its outputs, which makes a shared
  // output-side bias unidentifiable there
  void init(int dim, int n_heads, int mlp_ratio, Rng& rng, bool fc2_bias = true) {
    heads = n_heads;
    ln1_g = Param<T>({dim}, T(1));
    ln1_b = Param<T>({dim}, T(0));
    ln2_g = Param<T>({dim}, T(1));
    ln2_b = Param<T>({dim}, T(0));
    wq.init(dim, dim, rng);
    // no key bias: it shifts every score in a row equally, which the row
    // softmax cancels, leaving a parameter with an identically zero gradient
    wk.init(dim, dim, rng, 0.02, /*with_bias=*/false);
    wv.init(dim, dim, rng);
    proj.init(dim, dim, rng);
    fc1.init(dim, dim * mlp_ratio, rng);
    fc2.init(dim * mlp_ratio, dim, rng, 0.02, fc2_bias);
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    r.add(ln1_g, p + ".ln1.g");
    r.add(ln1_b, p + ".ln1.b");
    wq.reg(r, p + ".wq");
    wk.reg(r, p + ".wk");
    wv.reg(r, p + ".wv");
    proj.reg(r, p + ".proj");
    r.add(ln2_g, p + ".ln2.g");
    r.add(ln2_b, p + ".ln2.b");
    fc1.reg(r, p + ".fc1");
    fc2.reg(r, p + ".fc2");
  }

  Tensor<T> forward(Tape<T>& t, Tensor<T> x, AttnCapture<T>* cap = nullptr) {
    Tensor<T> h = t.layer_norm(x, t.leaf(ln1_g), t.leaf(ln1_b));
    Tensor<T> attn = t.attention(wq(t, h), wk(t, h), wv(t, h), heads, cap);
    x = t.add(x, proj(t, attn));
    Tensor<T> h2 = t.layer_norm(x, t.leaf(ln2_g), t.leaf(ln2_b));
    return t.add(x, fc2(t, t.gelu(fc1(t, h2))));
  }
};

// two-layer projection head with gelu
template <typename T>
struct Mlp2 {
  Linear<T> fc1, fc2;
  void init(int in, int hidden, int out, Rng& rng) {
    fc1.init(in, hidden, rng);
    fc2.init(hidden, out, rng);
  }
  void reg(ParamRegistry<T>& r, const std::string& p) {
    fc1.reg(r, p + ".fc1");
    fc2.reg(r, p + ".fc2");
  }
  Tensor<T> operator()(Tape<T>& t, Tensor<T> x) { return fc2(t, t.gelu(fc1(t, x))); }
};

}  // namespace voxmim
