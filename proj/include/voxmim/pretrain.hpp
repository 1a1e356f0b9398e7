#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "voxmim/encoder.hpp"
#include "voxmim/volume.hpp"

namespace voxmim {

struct LossWeights {
  double sd = 0.005;
  double pixel = 0.79;
  double age = 0.1;
  double adv = 0.1;

  void validate() const {
    if (sd < 0 || pixel < 0 || age < 0 || adv < 0)
      throw std::invalid_argument("loss weights must be >= 0");
  }
};

// Task switches matching the ablation ladder: mode0 none, mode1 +masked
// reconstruction, mode2 +age, mode3 +visible restoration, mode4 +adversarial.
struct AblationMode {
  bool res_a = true;
  bool age = true;
  bool res_b = true;
  bool adv = true;

  static AblationMode from_index(int idx) {
    if (idx < 0 || idx > 4)
      throw std::invalid_argument("ablation mode must be 0..4, got " + std::to_string(idx));
    AblationMode m;
    m.res_a = idx >= 1;
    m.age = idx >= 2;
    m.res_b = idx >= 3;
    m.adv = idx >= 4;
    return m;
  }
  bool any() const { return res_a || age || res_b || adv; }
  bool needs_pixel() const { return res_a || res_b; }
};

struct PretrainConfig {
  LossWeights weights;
  AblationMode mode;
  double mask_ratio = 0.76;
  double nonlinear_rate = 0.9;  // per-volume application probability of the intensity remap
  int disc_dim = 32;
  int disc_heads = 4;
  int disc_blocks = 2;
  bool sd_exclude_diagonal = false;
  int epochs = 500;
  int warmup_epochs = 20;
  int batch_size = 16;
  double base_lr = -1.0;  // < 0: 1.5e-4 * batch_size / 4
  double weight_decay = 0.05;

  double effective_base_lr() const {
    return base_lr >= 0 ? base_lr : 1.5e-4 * batch_size / 4.0;
  }
};

// Transformer discriminator: patch matrix -> embed+pos -> blocks -> mean pool
// -> linear -> sigmoid, clamped away from {0,1} so the logs stay finite.
template <typename T>
struct Discriminator {
  Linear<T> embed;
  Param<T> pos;
  std::vector<TransformerBlock<T>> blocks;
  Linear<T> out;

  void init(int patch_len, int n_tokens, int dim, int heads, int n_blocks, int mlp_ratio,
            Rng& rng) {
    embed.init(patch_len, dim, rng);
    pos = Param<T>({n_tokens, dim});
    init_trunc_normal(pos, rng);
    blocks.assign(static_cast<size_t>(n_blocks), TransformerBlock<T>{});
    for (auto& b : blocks) b.init(dim, heads, mlp_ratio, rng);
    out.init(dim, 1, rng);
  }

  void reg(ParamRegistry<T>& r, const std::string& prefix = "disc") {
    embed.reg(r, prefix + ".embed");
    r.add(pos, prefix + ".pos");
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].reg(r, prefix + ".block" + std::to_string(i));
    out.reg(r, prefix + ".out");
  }

  // scalar probability in (1e-7, 1 - 1e-7)
  Tensor<T> prob(Tape<T>& t, Tensor<T> patch_matrix) {
    Tensor<T> x = t.add(embed(t, patch_matrix), t.leaf(pos));
    for (auto& b : blocks) x = b.forward(t, x);
    Tensor<T> logit = out(t, t.reshape(t.mean0(x), {1, t.shape_of(x)[1]}));
    return t.clamp(t.sigmoid(t.mean(logit)), T(1e-7), T(1) - T(1e-7));
  }
};

// Eq-style semantic diversity penalty on the two projected embeddings:
// mean(-log sigmoid(Z1 Z1^T)) + mean(-log(1 - sigmoid(Z2 Z2^T))), sigmoids
// clamped to [1e-7, 1-1e-7].
template <typename T>
Tensor<T> semantic_diversity_loss(Tape<T>& t, Tensor<T> z1, Tensor<T> z2,
                                  bool exclude_diagonal = false) {
  const Shape& s1 = t.shape_of(z1);
  const Shape& s2 = t.shape_of(z2);
  if (s1.size() != 2 || s1 != s2)
    throw std::invalid_argument("semantic_diversity_loss: shapes " + shape_str(s1) + " vs " +
                                shape_str(s2));
  const int n = s1[0];
  auto gram = [&](Tensor<T> z) { return t.matmul(z, t.transpose(z)); };
  auto clamped_sigmoid = [&](Tensor<T> g) {
    return t.clamp(t.sigmoid(g), T(1e-7), T(1) - T(1e-7));
  };
  Tensor<T> s_pos = clamped_sigmoid(gram(z1));
  Tensor<T> s_neg = clamped_sigmoid(gram(z2));
  Tensor<T> log_pos = t.log(s_pos);
  Tensor<T> log_neg = t.log(t.add_scalar(t.scale(s_neg, T(-1)), T(1)));
  if (!exclude_diagonal)
    return t.scale(t.add(t.mean(log_pos), t.mean(log_neg)), T(-1));
  // off-diagonal mean: zero the diagonal then rescale the sum
  std::vector<T> mask(static_cast<size_t>(n) * n, T(1));
  for (int i = 0; i < n; ++i) mask[static_cast<size_t>(i) * n + i] = T(0);
  Tensor<T> m = t.constant({n, n}, mask);
  const T denom = static_cast<T>(n) * static_cast<T>(n - 1);
  Tensor<T> sum_pos = t.sum(t.mul(log_pos, m));
  Tensor<T> sum_neg = t.sum(t.mul(log_neg, m));
  return t.scale(t.add(sum_pos, sum_neg), T(-1) / denom);
}

// non-saturating adversarial pair: the discriminator minimizes
// -[log D(real) + log(1 - D(fake))], the generator minimizes -log D(fake)
template <typename T>
Tensor<T> discriminator_loss(Tape<T>& t, Tensor<T> d_real, Tensor<T> d_fake_detached) {
  Tensor<T> lr = t.log(d_real);
  Tensor<T> lf = t.log(t.add_scalar(t.scale(d_fake_detached, T(-1)), T(1)));
  return t.scale(t.add(t.mean(lr), t.mean(lf)), T(-1));
}
template <typename T>
Tensor<T> generator_adv_loss(Tape<T>& t, Tensor<T> d_fake) {
  return t.scale(t.mean(t.log(d_fake)), T(-1));
}

// weighted synthesis of the active task losses; inactive slots pass invalid
// tensors and are skipped
template <typename T>
Tensor<T> total_pretrain_loss(Tape<T>& t, Tensor<T> l_sd, Tensor<T> l_pixel, Tensor<T> l_age,
                              Tensor<T> l_adv, const LossWeights& w, const AblationMode& mode) {
  w.validate();
  Tensor<T> total = t.scalar(T(0));
  if (mode.res_a && l_sd.valid()) total = t.add(total, t.scale(l_sd, static_cast<T>(w.sd)));
  if (mode.needs_pixel() && l_pixel.valid())
    total = t.add(total, t.scale(l_pixel, static_cast<T>(w.pixel)));
  if (mode.age && l_age.valid()) total = t.add(total, t.scale(l_age, static_cast<T>(w.age)));
  if (mode.adv && l_adv.valid()) total = t.add(total, t.scale(l_adv, static_cast<T>(w.adv)));
  return total;
}

// The full pretraining network: shared encoder, dual projection heads with a
// mask-token decoder (branch A), a restoration head for distorted visible
// patches (branch B), an age decoder and the discriminator.
template <typename T>
struct PretrainModel {
  PretrainConfig cfg;
  PatchGrid grid;
  Encoder<T> enc;
  Mlp2<T> h_a1, h_a2, h_b;
  Param<T> z_mask;
  Param<T> dec_a_pos, dec_b_pos;
  TransformerBlock<T> dec_a_blk, dec_b_blk, age_blk;
  Linear<T> dec_a_pix, dec_b_pix, age_out;
  Discriminator<T> disc;

  void init(const EncoderConfig& ec, const PretrainConfig& pc, const PatchGrid& g, Rng& rng) {
    cfg = pc;
    grid = g;
    enc.init(ec, rng);
    const int d = ec.dim;
    h_a1.init(d, d, d, rng);
    h_a2.init(d, d, d, rng);
    h_b.init(d, d, d, rng);
    z_mask = Param<T>({d});
    init_trunc_normal(z_mask, rng);
    dec_a_pos = Param<T>({g.count(), d});
    init_trunc_normal(dec_a_pos, rng);
    dec_b_pos = Param<T>({g.count(), d});
    init_trunc_normal(dec_b_pos, rng);
    // Eq.(2)-style subtraction of the two decoder passes cancels any bias
    // added after the last nonlinearity, so branch A carries none
    dec_a_blk.init(d, ec.heads, ec.mlp_ratio, rng, /*fc2_bias=*/false);
    dec_b_blk.init(d, ec.heads, ec.mlp_ratio, rng);
    age_blk.init(d, ec.heads, ec.mlp_ratio, rng);
    dec_a_pix.init(d, g.patch_len(), rng, 0.02, /*with_bias=*/false);
    dec_b_pix.init(d, g.patch_len(), rng);
    age_out.init(d, 1, rng);
    disc.init(g.patch_len(), g.count(), pc.disc_dim, pc.disc_heads, pc.disc_blocks,
              4, rng);
  }

  // encoder + task heads active under the mode; update order is fixed by
  // registration order
  void reg_generator(ParamRegistry<T>& r) {
    enc.reg(r);
    if (cfg.mode.res_a) {
      h_a1.reg(r, "h_a1");
      h_a2.reg(r, "h_a2");
      r.add(z_mask, "dec_a.z_mask");
      r.add(dec_a_pos, "dec_a.pos");
      dec_a_blk.reg(r, "dec_a.block");
      dec_a_pix.reg(r, "dec_a.pix");
    }
    if (cfg.mode.res_b) {
      h_b.reg(r, "h_b");
      r.add(dec_b_pos, "dec_b.pos");
      dec_b_blk.reg(r, "dec_b.block");
      dec_b_pix.reg(r, "dec_b.pix");
    }
    if (cfg.mode.age) {
      age_blk.reg(r, "d_age.block");
      age_out.reg(r, "d_age.out");
    }
  }
  void reg_discriminator(ParamRegistry<T>& r) {
    if (cfg.mode.adv) disc.reg(r);
  }
  // every parameter regardless of mode, for checkpointing
  void reg_all(ParamRegistry<T>& r) {
    enc.reg(r);
    h_a1.reg(r, "h_a1");
    h_a2.reg(r, "h_a2");
    r.add(z_mask, "dec_a.z_mask");
    r.add(dec_a_pos, "dec_a.pos");
    dec_a_blk.reg(r, "dec_a.block");
    dec_a_pix.reg(r, "dec_a.pix");
    h_b.reg(r, "h_b");
    r.add(dec_b_pos, "dec_b.pos");
    dec_b_blk.reg(r, "dec_b.block");
    dec_b_pix.reg(r, "dec_b.pix");
    age_blk.reg(r, "d_age.block");
    age_out.reg(r, "d_age.out");
    disc.reg(r);
  }

  // --- per-sample forward pieces -------------------------------------

  Tensor<T> encode_visible(Tape<T>& t, Tensor<T> vis_patches, const MaskPlan& plan) {
    return enc.encode(t, enc.embed_patches(t, vis_patches, plan.visible), false).layers.back();
  }

  struct BranchA {
    Tensor<T> z1, z2;          // projected embeddings
    Tensor<T> masked_preds;    // (n_masked, patch_len)
  };

  // D_A(z1 (+) mask tokens) - D_A(z2 (+) mask tokens) at masked positions
  BranchA branch_a(Tape<T>& t, Tensor<T> y_vis, const MaskPlan& plan) {
    BranchA out;
    out.z1 = h_a1(t, y_vis);
    out.z2 = h_a2(t, y_vis);
    auto decode = [&](Tensor<T> z) {
      Tensor<T> vis_part = t.scatter0(z, plan.visible, grid.count());
      Tensor<T> mask_tokens =
          t.broadcast0(t.leaf(z_mask), static_cast<int>(plan.masked.size()));
      Tensor<T> mask_part = t.scatter0(mask_tokens, plan.masked, grid.count());
      Tensor<T> full = t.add(t.add(vis_part, mask_part), t.leaf(dec_a_pos));
      Tensor<T> decoded = dec_a_pix(t, dec_a_blk.forward(t, full));
      return t.gather0(decoded, plan.masked);
    };
    out.masked_preds = t.sub(decode(out.z1), decode(out.z2));
    return out;
  }

  // D_B(h_B(E(distorted visible))) at the visible positions
  Tensor<T> branch_b(Tape<T>& t, Tensor<T> distorted_vis, const MaskPlan& plan) {
    Tensor<T> y = encode_visible(t, distorted_vis, plan);
    Tensor<T> z = h_b(t, y);
    Tensor<T> dec_in = t.add(z, t.gather0(t.leaf(dec_b_pos), plan.visible));
    return dec_b_pix(t, dec_b_blk.forward(t, dec_in));
  }

  // scalar normalized-age prediction from the visible-token features
  Tensor<T> predict_age(Tape<T>& t, Tensor<T> y_vis) {
    Tensor<T> pooled = t.mean0(age_blk.forward(t, y_vis));
    const int d = t.shape_of(y_vis)[1];
    return t.mean(age_out(t, t.reshape(pooled, {1, d})));
  }

  // Eq.(4)-style disjoint placement into the full patch matrix; either branch
  // falls back to ground truth when inactive
  Tensor<T> assemble_full(Tape<T>& t, Tensor<T> masked_src, Tensor<T> visible_src,
                          const MaskPlan& plan) {
    return t.add(t.scatter0(masked_src, plan.masked, grid.count()),
                 t.scatter0(visible_src, plan.visible, grid.count()));
  }
};

}  // namespace voxmim
