#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "voxmim/encoder.hpp"

namespace voxmim {

struct MATSConfig {
  int k = 3;  // tokens selected per layer
  // resolves the "select the top tokens ... according to their indices"
  // ambiguity: selected tokens are re-sorted ascending by index before the
  // classifier sees them
  bool sort_selected_by_index = true;
};

// Mutual attention of the guider (token 0) with every patch token i >= 1:
//   S_i = softmax(row 0)[i] * softmax(column 0)[i]
// computed in double from the head-averaged score matrix. Both softmax
// normalizations run over all N+1 indices including the guider itself;
// returned scores cover patch tokens only (length N, 0-based patch index).
inline std::vector<double> mutual_attention_scores(const std::vector<double>& a, int n_tokens) {
  const int m = n_tokens;  // N+1 including the guider
  if (m < 2 || static_cast<int64_t>(a.size()) != int64_t(m) * m)
    throw std::invalid_argument("mutual_attention_scores: matrix size " +
                                std::to_string(a.size()) + " does not match " +
                                std::to_string(m) + " tokens");
  auto softmax_of = [m](auto&& at) {
    double mx = at(0);
    for (int j = 1; j < m; ++j) mx = std::max(mx, at(j));
    std::vector<double> e(static_cast<size_t>(m));
    double z = 0;
    for (int j = 0; j < m; ++j) {
      e[static_cast<size_t>(j)] = std::exp(at(j) - mx);
      z += e[static_cast<size_t>(j)];
    }
    for (auto& v : e) v /= z;
    return e;
  };
  const auto row0 = softmax_of([&](int j) { return a[static_cast<size_t>(j)]; });
  const auto col0 = softmax_of([&](int j) { return a[static_cast<size_t>(j) * m]; });
  std::vector<double> s(static_cast<size_t>(m - 1));
  for (int i = 1; i < m; ++i)
    s[static_cast<size_t>(i - 1)] = row0[static_cast<size_t>(i)] * col0[static_cast<size_t>(i)];
  return s;
}

struct LayerSelection {
  std::vector<double> scores;   // per patch token
  std::vector<int> indices;     // selected patch tokens (0-based, guider excluded)
};

struct SelectionResult {
  std::vector<LayerSelection> layers;
};

// head-averaged score matrix for one layer; pre-softmax scaled scores by
// default, post-softmax attention as the config alternative
template <typename T>
std::vector<double> layer_score_matrix(const AttnCapture<T>& cap, bool post_softmax) {
  const size_t nn = static_cast<size_t>(cap.n) * cap.n;
  std::vector<double> a(nn, 0.0);
  if (!post_softmax) {
    for (size_t i = 0; i < nn; ++i) a[i] = static_cast<double>(cap.raw_mean[i]);
  } else {
    for (const auto& head : cap.post)
      for (size_t i = 0; i < nn; ++i) a[i] += static_cast<double>(head[i]);
    for (auto& v : a) v /= static_cast<double>(cap.post.size());
  }
  return a;
}

// top-k patch tokens per layer; ties break toward the lower index
template <typename T>
SelectionResult select_tokens(const std::vector<AttnCapture<T>>& records, const MATSConfig& cfg,
                              bool post_softmax_scores) {
  SelectionResult result;
  result.layers.reserve(records.size());
  for (const auto& cap : records) {
    const int n_patches = cap.n - 1;
    if (cfg.k < 1 || cfg.k > n_patches)
      throw std::invalid_argument("select_tokens: k=" + std::to_string(cfg.k) +
                                  " outside 1.." + std::to_string(n_patches));
    LayerSelection sel;
    sel.scores = mutual_attention_scores(layer_score_matrix(cap, post_softmax_scores), cap.n);
    std::vector<int> order(static_cast<size_t>(n_patches));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
      if (sel.scores[static_cast<size_t>(x)] != sel.scores[static_cast<size_t>(y)])
        return sel.scores[static_cast<size_t>(x)] > sel.scores[static_cast<size_t>(y)];
      return x < y;
    });
    sel.indices.assign(order.begin(), order.begin() + cfg.k);
    if (cfg.sort_selected_by_index) std::sort(sel.indices.begin(), sel.indices.end());
    result.layers.push_back(std::move(sel));
  }
  return result;
}

// Fine-tuning network: pretrained encoder plus guider token, per-layer token
// selection, and a linear classifier over the concatenated selected tokens.
// The guider steers selection but never reaches the classifier.
template <typename T>
struct FinetuneModel {
  Encoder<T> enc;
  MATSConfig mats;
  Linear<T> head;
  int n_classes = 2;

  void init(const EncoderConfig& ec, const MATSConfig& mc, int classes, Rng& rng) {
    enc.init(ec, rng);
    mats = mc;
    n_classes = classes;
    head.init(ec.blocks * mc.k * ec.dim, classes, rng);
  }

  void reg(ParamRegistry<T>& r) {
    enc.reg(r);
    enc.reg_guider(r);
    head.reg(r, "classifier");
  }
  void reg_head_only(ParamRegistry<T>& r) { head.reg(r, "classifier"); }

  struct Output {
    Tensor<T> logits;  // (1, n_classes)
    SelectionResult selection;
  };

  // selection indices are recomputed on every forward pass (per sample, per
  // step); the index choice itself is non-differentiable, gradients flow
  // through the gathered token features and the guider's attention
  Output forward(Tape<T>& t, const std::vector<T>& patches) {
    const int n = enc.cfg.max_tokens;
    Tensor<T> rows = t.constant({n, enc.cfg.patch_len}, patches);
    std::vector<int> positions(static_cast<size_t>(n));
    std::iota(positions.begin(), positions.end(), 0);
    Tensor<T> tokens = enc.prepend_guider(t, enc.embed_patches(t, rows, positions));
    auto encoded = enc.encode(t, tokens, /*collect=*/true);

    Output out;
    out.selection = select_tokens(encoded.captures, mats, enc.cfg.post_softmax_scores);
    std::vector<Tensor<T>> picked;
    picked.reserve(encoded.layers.size());
    for (size_t l = 0; l < encoded.layers.size(); ++l) {
      std::vector<int> feature_rows;  // +1 skips the guider row
      for (int idx : out.selection.layers[l].indices) feature_rows.push_back(idx + 1);
      picked.push_back(t.gather0(encoded.layers[l], feature_rows));
    }
    Tensor<T> cat = t.concat0(picked);
    const int flat = static_cast<int>(encoded.layers.size()) * mats.k * enc.cfg.dim;
    out.logits = head(t, t.reshape(cat, {1, flat}));
    return out;
  }
};

}  // namespace voxmim
