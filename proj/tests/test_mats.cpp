#include <cmath>
#include <set>

#include "doctest.h"
#include "voxmim/finetune.hpp"
#include "voxmim/mats.hpp"
#include "voxmim/phantom.hpp"
#include "voxmim/volume.hpp"

using namespace voxmim;

TEST_CASE("uniform attention gives uniform mutual scores") {
  const int m = 5;  // N = 4
  std::vector<double> a(m * m, 0.7);
  auto s = mutual_attention_scores(a, m);
  REQUIRE(s.size() == 4);
  for (double v : s) CHECK(v == doctest::Approx(1.0 / (m * m)).epsilon(1e-12));
}

TEST_CASE("hand-computed 3x3 mutual attention example") {
  // A = [[0,1,0],[2,0,0],[0,0,0]]
  // row 0 softmax = [1, e, 1] / (2 + e); col 0 softmax = [1, e^2, 1] / (2 + e^2)
  std::vector<double> a = {0, 1, 0, 2, 0, 0, 0, 0, 0};
  auto s = mutual_attention_scores(a, 3);
  const double e = std::exp(1.0), e2 = std::exp(2.0);
  const double s1 = (e / (2 + e)) * (e2 / (2 + e2));
  const double s2 = (1 / (2 + e)) * (1 / (2 + e2));
  REQUIRE(s.size() == 2);
  CHECK(std::fabs(s[0] - s1) < 1e-12);
  CHECK(std::fabs(s[1] - s2) < 1e-12);
}

TEST_CASE("mutual scores are invariant to a constant shift of A") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 3 + int(rng.below(8));
    std::vector<double> a(static_cast<size_t>(m) * m);
    for (auto& v : a) v = rng.uniform(-3.0, 3.0);
    const double c = rng.uniform(-40.0, 40.0);
    std::vector<double> shifted = a;
    for (auto& v : shifted) v += c;
    auto s0 = mutual_attention_scores(a, m);
    auto s1 = mutual_attention_scores(shifted, m);
    for (size_t i = 0; i < s0.size(); ++i) REQUIRE(std::fabs(s0[i] - s1[i]) < 1e-9);
  }
}

TEST_CASE("each softmax factor sums to one and scores are positive") {
  Rng rng(4);
  const int m = 7;
  std::vector<double> a(m * m);
  for (auto& v : a) v = rng.uniform(-2.0, 2.0);
  auto softmax_sum = [&](bool row) {
    double mx = -1e300;
    for (int j = 0; j < m; ++j) mx = std::max(mx, row ? a[j] : a[size_t(j) * m]);
    double z = 0;
    for (int j = 0; j < m; ++j) z += std::exp((row ? a[j] : a[size_t(j) * m]) - mx);
    double s = 0;
    for (int j = 0; j < m; ++j) s += std::exp((row ? a[j] : a[size_t(j) * m]) - mx) / z;
    return s;
  };
  CHECK(softmax_sum(true) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(softmax_sum(false) == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : mutual_attention_scores(a, m)) CHECK(v > 0.0);
}

namespace {
AttnCapture<float> capture_from_scores(const std::vector<double>& s) {
  // builds a capture whose mutual scores rank like s: row 0 and column 0 of
  // the raw matrix carry log-ish weights; simplest is a diagonal-free matrix
  // with row0 = col0 = raw values
  const int n = static_cast<int>(s.size()) + 1;
  AttnCapture<float> cap;
  cap.n = n;
  cap.raw_mean.assign(static_cast<size_t>(n) * n, 0.0f);
  for (int i = 1; i < n; ++i) {
    cap.raw_mean[static_cast<size_t>(i)] = static_cast<float>(s[static_cast<size_t>(i - 1)]);
    cap.raw_mean[static_cast<size_t>(i) * n] = static_cast<float>(s[static_cast<size_t>(i - 1)]);
  }
  cap.post.assign(1, std::vector<float>(static_cast<size_t>(n) * n,
                                        1.0f / static_cast<float>(n)));
  return cap;
}
}  // namespace

TEST_CASE("top-k selection with index tie-break") {
  MATSConfig cfg;
  cfg.k = 1;
  {
    auto cap = capture_from_scores({0.1, 0.5, 0.3});
    auto sel = select_tokens<float>({cap}, cfg, false);
    REQUIRE(sel.layers.size() == 1);
    CHECK(sel.layers[0].indices == std::vector<int>{1});
  }
  {
    cfg.k = 2;
    auto cap = capture_from_scores({0.4, 0.4, 0.4});
    auto sel = select_tokens<float>({cap}, cfg, false);
    CHECK(sel.layers[0].indices == std::vector<int>{0, 1});  // ties: lower index wins
  }
  {
    cfg.k = 3;
    auto cap = capture_from_scores({0.2, 0.9, 0.5});
    auto sel = select_tokens<float>({cap}, cfg, false);
    // k = N selects every patch token, guider still excluded, ascending order
    CHECK(sel.layers[0].indices == std::vector<int>{0, 1, 2});
  }
  {
    cfg.k = 4;
    auto cap = capture_from_scores({0.2, 0.9, 0.5});
    CHECK_THROWS_AS(select_tokens<float>({cap}, cfg, false), std::invalid_argument);
  }
}

TEST_CASE("guider is never selected over random attention matrices") {
  Rng rng(5);
  MATSConfig cfg;
  cfg.k = 3;
  for (int trial = 0; trial < 1000; ++trial) {
    AttnCapture<float> cap;
    cap.n = 4 + int(rng.below(8));
    cap.raw_mean.resize(static_cast<size_t>(cap.n) * cap.n);
    for (auto& v : cap.raw_mean) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    cap.post.assign(1, std::vector<float>(cap.raw_mean.begin(), cap.raw_mean.end()));
    auto sel = select_tokens<float>({cap}, cfg, false);
    for (int idx : sel.layers[0].indices) {
      REQUIRE(idx >= 0);
      REQUIRE(idx < cap.n - 1);  // patch-token space, guider has no index here
    }
    // deterministic: same capture, same selection
    auto sel2 = select_tokens<float>({cap}, cfg, false);
    REQUIRE(sel.layers[0].indices == sel2.layers[0].indices);
  }
}

namespace {
FinetuneModel<float> tiny_ft_model(Rng& rng, int k = 2) {
  EncoderConfig ec;
  ec.dim = 8;
  ec.blocks = 2;
  ec.heads = 2;
  ec.mlp_ratio = 2;
  ec.patch_len = 8;
  ec.max_tokens = 8;
  MATSConfig mc;
  mc.k = k;
  FinetuneModel<float> m;
  m.init(ec, mc, 2, rng);
  return m;
}
}  // namespace

TEST_CASE("classifier input is the (layer, index)-ordered concatenation of selected tokens") {
  Rng rng(6);
  auto m = tiny_ft_model(rng);
  CHECK(m.head.w.shape == Shape{2 * 2 * 8, 2});

  std::vector<float> patches(64);
  for (auto& v : patches) v = static_cast<float>(rng.uniform());
  Tape<float> t;
  auto out = m.forward(t, patches);
  CHECK(out.logits.shape() == Shape{1, 2});
  REQUIRE(out.selection.layers.size() == 2);
  for (const auto& l : out.selection.layers) {
    CHECK(l.indices.size() == 2);
    CHECK(std::is_sorted(l.indices.begin(), l.indices.end()));
  }

  // zero classifier weights: logits equal the bias
  std::fill(m.head.w.value.begin(), m.head.w.value.end(), 0.0f);
  m.head.b.value = {0.25f, -0.75f};
  Tape<float> t2;
  auto out2 = m.forward(t2, patches);
  CHECK(out2.logits.data()[0] == doctest::Approx(0.25f));
  CHECK(out2.logits.data()[1] == doctest::Approx(-0.75f));
}

TEST_CASE("logits depend only on the selected tokens") {
  Rng rng(7);
  auto m = tiny_ft_model(rng);
  std::vector<float> patches(64);
  for (auto& v : patches) v = static_cast<float>(rng.uniform());
  Tape<float> t;
  auto out = m.forward(t, patches);

  std::set<int> selected;
  for (const auto& l : out.selection.layers)
    for (int idx : l.indices) selected.insert(idx);

  // gather the selected rows from each layer snapshot and mix every other
  // feature row; the classifier must not notice
  auto encoded_logits = [&](const std::vector<float>& perturb_mask) {
    // rebuild forward but overwrite non-selected feature rows via a fresh run
    // is not possible from outside; instead verify locality through gradients:
    // d logits / d (non-selected token rows) of the last layer is zero.
    (void)perturb_mask;
    return 0;
  };
  (void)encoded_logits;

  // gradient locality: backprop the first logit and look at the gradient of
  // the last layer's feature rows
  Tape<float> t3;
  std::vector<int> positions(8);
  std::iota(positions.begin(), positions.end(), 0);
  Tensor<float> rows = t3.constant({8, 8}, patches);
  Tensor<float> tokens = m.enc.prepend_guider(t3, m.enc.embed_patches(t3, rows, positions));
  auto enc_res = m.enc.encode(t3, tokens, true);
  auto sel = select_tokens(enc_res.captures, m.mats, m.enc.cfg.post_softmax_scores);
  std::vector<Tensor<float>> picked;
  for (size_t l = 0; l < enc_res.layers.size(); ++l) {
    std::vector<int> fr;
    for (int idx : sel.layers[l].indices) fr.push_back(idx + 1);
    picked.push_back(t3.gather0(enc_res.layers[l], fr));
  }
  auto logits = m.head(t3, t3.reshape(t3.concat0(picked), {1, 2 * 2 * 8}));
  auto loss = t3.mean(logits);
  t3.backward(loss);
  const auto& last_grad = t3.grad_of(enc_res.layers.back());
  for (int row = 1; row < 9; ++row) {
    const int patch_idx = row - 1;
    double gsum = 0;
    for (int c = 0; c < 8; ++c) gsum += std::fabs(last_grad[static_cast<size_t>(row) * 8 + c]);
    const bool is_selected = std::find(sel.layers.back().indices.begin(),
                                       sel.layers.back().indices.end(),
                                       patch_idx) != sel.layers.back().indices.end();
    if (is_selected)
      CHECK(gsum > 0.0);
    else
      CHECK(gsum == 0.0);
  }
}

TEST_CASE("selection histogram sums to samples times k per layer") {
  Rng rng(8);
  auto m = tiny_ft_model(rng);
  FinetuneOptions opts;
  opts.epochs = 1;
  opts.threads = 1;
  FinetuneTrainer tr(m, opts);
  std::vector<std::vector<float>> rows;
  std::vector<int> labels;
  for (int s = 0; s < 6; ++s) {
    std::vector<float> p(64);
    for (auto& v : p) v = static_cast<float>(rng.uniform());
    rows.push_back(std::move(p));
    labels.push_back(s % 2);
  }
  auto ev = tr.evaluate(rows, labels);
  REQUIRE(ev.selections.size() == 6);
  for (int layer = 0; layer < 2; ++layer) {
    int total = 0;
    for (const auto& sel : ev.selections)
      total += static_cast<int>(sel.layers[static_cast<size_t>(layer)].indices.size());
    CHECK(total == 6 * m.mats.k);
  }
}

TEST_CASE("finetune smoke run: learns a separable toy task deterministically") {
  auto run = [](bool head_only, int threads) {
    Rng rng(9);
    auto m = tiny_ft_model(rng);
    FinetuneOptions opts;
    opts.epochs = head_only ? 10 : 40;
    opts.warmup_epochs = 2;
    opts.batch_size = 8;
    opts.lr = 2e-3;
    opts.threads = threads;
    opts.head_only = head_only;
    // class toggles the level of the first patch: trivially separable
    std::vector<std::vector<float>> rows;
    std::vector<int> labels;
    Rng drng(10);
    for (int s = 0; s < 16; ++s) {
      std::vector<float> p(64);
      for (auto& v : p) v = static_cast<float>(drng.uniform(0.2, 0.4));
      const int label = s % 2;
      if (label == 1)
        for (int j = 0; j < 8; ++j) p[static_cast<size_t>(j)] += 0.5f;
      rows.push_back(std::move(p));
      labels.push_back(label);
    }
    FinetuneTrainer tr(m, opts);
    double final_acc = 0;
    tr.fit(rows, labels, [&](const FinetuneEpochStats& st) { final_acc = st.accuracy; });
    auto ev = tr.evaluate(rows, labels);
    int correct = 0;
    for (size_t i = 0; i < labels.size(); ++i)
      correct += ev.predictions[i] == labels[i] ? 1 : 0;
    return std::pair<double, std::vector<double>>(double(correct) / labels.size(),
                                                  ev.class1_scores);
  };
  auto [acc, scores] = run(false, 1);
  CHECK(acc >= 0.95);

  // probe configuration (frozen encoder) still trains
  auto [acc_head, scores_head] = run(true, 1);
  CHECK(acc_head >= 0.75);

  // determinism including under threading
  auto [acc2, scores2] = run(false, 2);
  CHECK(acc == acc2);
  CHECK(scores == scores2);
}

TEST_CASE("labels outside the class set are rejected") {
  Rng rng(11);
  auto m = tiny_ft_model(rng);
  FinetuneOptions opts;
  FinetuneTrainer tr(m, opts);
  std::vector<std::vector<float>> rows(2, std::vector<float>(64, 0.5f));
  CHECK_THROWS_AS(tr.fit(rows, {0, 7}), std::invalid_argument);
}
