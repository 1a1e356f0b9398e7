#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "voxmim/nn.hpp"

namespace voxmim {

struct EncoderConfig {
  int dim = 64;         // hidden size (512 at full scale)
  int blocks = 4;       // transformer depth (8 at full scale)
  int heads = 4;        // attention heads (12 at full scale)
  int mlp_ratio = 4;
  int patch_len = 216;  // p^3 voxels per patch
  int max_tokens = 150;
  // token scores for selection come from the head-averaged pre-softmax scaled
  // scores by default; post-softmax averaging is the config alternative
  bool post_softmax_scores = false;

  void validate() const {
    if (dim < 1 || blocks < 1 || heads < 1 || mlp_ratio < 1 || patch_len < 1 || max_tokens < 1)
      throw std::invalid_argument("encoder config: all sizes must be positive");
    if (dim % heads != 0)
      throw std::invalid_argument("encoder config: dim " + std::to_string(dim) +
                                  " not divisible by heads " + std::to_string(heads));
  }
};

template <typename T>
struct EncodeResult {
  std::vector<Tensor<T>> layers;          // token features after each block
  std::vector<AttnCapture<T>> captures;   // filled when collect is requested
};

// Shared ViT encoder: linear patch embedding plus learnable absolute
// positional embeddings indexed by grid position, then pre-norm blocks.
// The guider token is a learnable vector with no positional embedding,
// prepended only for fine-tuning.
template <typename T>
struct Encoder {
  EncoderConfig cfg;
  Linear<T> embed;
  Param<T> pos;
  Param<T> guider;
  std::vector<TransformerBlock<T>> blocks;

  void init(const EncoderConfig& c, Rng& rng) {
    c.validate();
    cfg = c;
    embed.init(cfg.patch_len, cfg.dim, rng);
    pos = Param<T>({cfg.max_tokens, cfg.dim});
    init_trunc_normal(pos, rng);
    guider = Param<T>({cfg.dim});
    init_trunc_normal(guider, rng);
    blocks.assign(static_cast<size_t>(cfg.blocks), TransformerBlock<T>{});
    for (auto& b : blocks) b.init(cfg.dim, cfg.heads, cfg.mlp_ratio, rng);
  }

  void reg(ParamRegistry<T>& r, const std::string& prefix = "encoder") {
    embed.reg(r, prefix + ".embed");
    r.add(pos, prefix + ".pos");
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].reg(r, prefix + ".block" + std::to_string(i));
  }
  void reg_guider(ParamRegistry<T>& r, const std::string& prefix = "encoder") {
    r.add(guider, prefix + ".guider");
  }

  // patch_rows: (n, patch_len) at original grid positions `positions`
  Tensor<T> embed_patches(Tape<T>& t, Tensor<T> patch_rows, const std::vector<int>& positions) {
    const Shape& s = t.shape_of(patch_rows);
    if (s.size() != 2 || s[1] != cfg.patch_len)
      throw std::invalid_argument("embed_patches: expected (n," + std::to_string(cfg.patch_len) +
                                  "), got " + shape_str(s));
    if (static_cast<size_t>(s[0]) != positions.size())
      throw std::invalid_argument("embed_patches: row/position count mismatch");
    return t.add(embed(t, patch_rows), t.gather0(t.leaf(pos), positions));
  }

  Tensor<T> prepend_guider(Tape<T>& t, Tensor<T> tokens) {
    return t.concat0({t.reshape(t.leaf(guider), {1, cfg.dim}), tokens});
  }

  EncodeResult<T> encode(Tape<T>& t, Tensor<T> tokens, bool collect) {
    EncodeResult<T> res;
    if (collect) res.captures.resize(blocks.size());
    res.layers.reserve(blocks.size());
    Tensor<T> x = tokens;
    for (size_t i = 0; i < blocks.size(); ++i) {
      x = blocks[i].forward(t, x, collect ? &res.captures[i] : nullptr);
      res.layers.push_back(x);
    }
    return res;
  }
};

}  // namespace voxmim
