#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "voxmim/grad_check.hpp"
#include "voxmim/nn.hpp"
#include "voxmim/optim.hpp"
#include "voxmim/rng.hpp"
#include "voxmim/tape.hpp"

using namespace voxmim;

namespace {

Param<double> make_param(Rng& rng, Shape shape, double lo = -1.5, double hi = 1.5) {
  Param<double> p(shape);
  for (auto& v : p.value) v = rng.uniform(lo, hi);
  return p;
}

}  // namespace

TEST_CASE("primitive forward examples") {
  Tape<float> t;
  auto eye = t.constant({2, 2}, {1, 0, 0, 1});
  auto col = t.constant({2, 1}, {2, 3});
  auto mm = t.matmul(eye, col);
  CHECK(mm.data() == std::vector<float>{2, 3});

  auto a = t.constant({2}, {1, 2});
  auto b = t.constant({1}, {3});
  auto cat = t.concat0({a, b});
  CHECK(cat.data() == std::vector<float>{1, 2, 3});

  auto src = t.constant({3}, {10, 20, 30});
  auto picked = t.gather0(src, {2, 0});
  CHECK(picked.data() == std::vector<float>{30, 10});
}

TEST_CASE("primitive shape errors name the op and both shapes") {
  Tape<float> t;
  auto a = t.constant({2, 3}, std::vector<float>(6, 1.f));
  auto b = t.constant({2, 2}, std::vector<float>(4, 1.f));
  CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  try {
    t.matmul(a, b);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("(2,3)") != std::string::npos);
    CHECK(std::string(e.what()).find("(2,2)") != std::string::npos);
  }
  CHECK_THROWS_AS(t.sub(a, b), std::invalid_argument);
  CHECK_THROWS_AS(t.gather0(a, {5}), std::invalid_argument);
}

TEST_CASE("activation forward examples") {
  Tape<float> t;
  auto sm = t.softmax_rows(t.constant({3}, {0, 0, 0}));
  for (float v : sm.data()) CHECK(v == doctest::Approx(1.0f / 3.0f));

  auto sg = t.sigmoid(t.constant({1}, {0}));
  CHECK(sg.data()[0] == doctest::Approx(0.5f));

  auto gain = t.constant({3}, {1, 1, 1});
  auto bias = t.constant({3}, {0, 0, 0});
  auto ln = t.layer_norm(t.constant({3}, {1, 2, 3}), gain, bias);
  CHECK(ln.data()[0] == doctest::Approx(-1.2247f).epsilon(1e-3));
  CHECK(ln.data()[1] == doctest::Approx(0.0f).epsilon(1e-6));
  CHECK(ln.data()[2] == doctest::Approx(1.2247f).epsilon(1e-3));

  auto bad = t.constant({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS(t.softmax_rows(bad), std::invalid_argument);
  CHECK_THROWS_AS(t.gelu(bad), std::invalid_argument);
}

TEST_CASE("softmax shift invariance") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> t;
    std::vector<double> x(7);
    for (auto& v : x) v = rng.uniform(-4.0, 4.0);
    const double c = rng.uniform(-50.0, 50.0);
    std::vector<double> xs = x;
    for (auto& v : xs) v += c;
    auto p1 = t.softmax_rows(t.constant({7}, x));
    auto p2 = t.softmax_rows(t.constant({7}, xs));
    for (int i = 0; i < 7; ++i)
      CHECK(std::fabs(p1.data()[i] - p2.data()[i]) < 1e-9);
  }
}

TEST_CASE("mse examples") {
  Tape<float> t;
  auto x = t.constant({3}, {0.3f, -1.0f, 2.0f});
  CHECK(t.mse(x, x).item() == 0.0f);
  auto z = t.constant({2}, {0, 0});
  auto o = t.constant({2}, {1, 1});
  CHECK(t.mse(z, o).item() == doctest::Approx(1.0f));
  auto p = t.constant({2}, {1, 3});
  auto q = t.constant({2}, {2, 5});
  CHECK(t.mse(p, q).item() == doctest::Approx(2.5f));
  CHECK_THROWS_AS(t.mse(x, z), std::invalid_argument);
}

TEST_CASE("backward examples") {
  {
    Tape<float> t;
    Param<float> w({1});
    w.value = {2.0f};
    auto loss = t.mse(t.leaf(w), t.zeros({1}));
    t.backward(loss);
    CHECK(w.grad[0] == doctest::Approx(4.0f));
  }
  {
    // loss independent of w: grad stays zero
    Tape<float> t;
    Param<float> w({3});
    w.value = {1, 2, 3};
    t.leaf(w);
    auto c = t.constant({2}, {1, 1});
    auto loss = t.mean(t.mul(c, c));
    t.backward(loss);
    CHECK(w.grad == std::vector<float>{0, 0, 0});
  }
  {
    Tape<float> t;
    Param<float> w({2});
    w.value = {1, 2};
    auto lw = t.leaf(w);
    auto loss = t.sum(t.mul(lw, lw));
    t.backward(loss);
    CHECK(w.grad == std::vector<float>{2, 4});
  }
  {
    Tape<float> t;
    auto v = t.constant({2}, {1, 1});
    CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
  }
}

TEST_CASE("backward through concat then gather is an exact permutation scatter") {
  Tape<float> t;
  Param<float> a({2, 2});
  a.value = {1, 2, 3, 4};
  Param<float> b({1, 2});
  b.value = {5, 6};
  auto cat = t.concat0({t.leaf(a), t.leaf(b)});
  std::vector<int> perm = {2, 0, 1};
  auto g = t.gather0(cat, perm);
  auto up = t.constant({3, 2}, {10, 20, 30, 40, 50, 60});
  auto loss = t.sum(t.mul(g, up));
  t.backward(loss);
  // row r of `up` lands at original row perm[r]
  CHECK(a.grad == std::vector<float>{30, 40, 50, 60});
  CHECK(b.grad == std::vector<float>{10, 20});
}

TEST_CASE("grad_check examples") {
  Rng rng(5);
  Param<double> w = make_param(rng, {3});
  auto mse_loss = [&](Tape<double>& t) {
    return t.mse(t.leaf(w), t.constant({3}, {0.2, -0.5, 1.0}));
  };
  CHECK(grad_check(mse_loss, {&w}) < 1e-6);

  Param<double> unused = make_param(rng, {2});
  auto const_loss = [&](Tape<double>& t) {
    t.leaf(unused);
    return t.mean(t.constant({2}, {1.0, 2.0}));
  };
  CHECK(grad_check(const_loss, {&unused}) == 0.0);

  int calls = 0;
  auto flaky = [&](Tape<double>& t) {
    return t.scalar(static_cast<double>(calls++));
  };
  CHECK_THROWS_AS(grad_check(flaky, {&w}), std::runtime_error);
}

// Exercises every primitive and activation with seeded random small tensors.
TEST_CASE("grad_check sweep over primitives and activations") {
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(99, "gradsweep", seed));
    const int which = static_cast<int>(seed % 17);
    const int m = 2 + int(rng.below(3));
    // width >= 3 for layer norm: a 2-wide row normalizes to sign(x0 - x1),
    // locally constant in x, which makes finite differences vacuous
    const int k = (which == 16 ? 3 : 2) + int(rng.below(3));
    const int n = 2 + int(rng.below(3));
    Param<double> A = make_param(rng, {m, k});
    Param<double> B = make_param(rng, {k, n});
    Param<double> C = make_param(rng, {m, k});
    Param<double> vk = make_param(rng, {k});
    auto weight = [&](Tape<double>& t, Tensor<double> x) {
      // non-uniform upstream gradient
      std::vector<double> wv(static_cast<size_t>(numel(x.shape())));
      Rng wr(derive_seed(seed, "w"));
      for (auto& v : wv) v = wr.uniform(-1.0, 1.0);
      return t.mean(t.mul(x, t.constant(x.shape(), wv)));
    };
    auto make_loss = [&](Tape<double>& t) -> Tensor<double> {
      auto a = t.leaf(A);
      auto b = t.leaf(B);
      auto c = t.leaf(C);
      auto v = t.leaf(vk);
      switch (which) {
        case 0: return weight(t, t.matmul(a, b));
        case 1: return weight(t, t.add(a, c));
        case 2: return weight(t, t.add(a, v));  // row broadcast
        case 3: return weight(t, t.sub(a, c));
        case 4: return weight(t, t.mul(a, c));
        case 5: return weight(t, t.transpose(a));
        case 6: return weight(t, t.concat0({a, c}));
        case 7: return weight(t, t.gather0(a, {m - 1, 0, m - 1}));
        case 8: return weight(t, t.scatter0(a, [&] {
                  std::vector<int> idx(m);
                  for (int i = 0; i < m; ++i) idx[i] = m - 1 - i;
                  return idx;
                }(), m + 2));
        case 9: return weight(t, t.reshape(a, {k, m}));
        case 10: return t.sum(t.mul(a, c));
        case 11: return weight(t, t.mean0(a));
        case 12: return weight(t, t.broadcast0(v, 3));
        case 13: return weight(t, t.softmax_rows(a));
        case 14: return weight(t, t.sigmoid(a));
        case 15: return weight(t, t.gelu(a));
        default:
          return weight(t, t.layer_norm(a, v, t.constant({k}, std::vector<double>(k, 0.1))));
      }
    };
    const double err = grad_check(make_loss, {&A, &B, &C, &vk});
    worst = std::max(worst, err);
    CHECK(err < 1e-5);
  }
  MESSAGE("worst relative error: ", worst);
}

TEST_CASE("grad_check attention and losses") {
  Rng rng(31);
  Param<double> Q = make_param(rng, {3, 4});
  Param<double> K = make_param(rng, {3, 4});
  Param<double> V = make_param(rng, {3, 4});
  auto attn_loss = [&](Tape<double>& t) {
    auto o = t.attention(t.leaf(Q), t.leaf(K), t.leaf(V), 2);
    return t.mse(o, t.constant({3, 4}, std::vector<double>(12, 0.25)));
  };
  CHECK(grad_check(attn_loss, {&Q, &K, &V}) < 1e-5);

  Param<double> L = make_param(rng, {2, 3});
  auto ce_loss = [&](Tape<double>& t) { return t.cross_entropy(t.leaf(L), {2, 0}); };
  CHECK(grad_check(ce_loss, {&L}) < 1e-5);

  Param<double> X = make_param(rng, {2, 5}, 0.1, 2.0);
  auto log_loss = [&](Tape<double>& t) { return t.mean(t.log(t.leaf(X))); };
  CHECK(grad_check(log_loss, {&X}) < 1e-5);

  Param<double> Y = make_param(rng, {6});
  auto clamp_loss = [&](Tape<double>& t) { return t.mean(t.clamp(t.leaf(Y), -5.0, 5.0)); };
  CHECK(grad_check(clamp_loss, {&Y}) < 1e-5);
}

TEST_CASE("attention matches a single-head oracle") {
  // one head: out = softmax(Q K^T / sqrt(d)) V computed longhand
  Rng rng(17);
  const int n = 4, d = 3;
  Tape<double> t;
  std::vector<double> q(n * d), k(n * d), v(n * d);
  for (auto* vec : {&q, &k, &v})
    for (auto& x : *vec) x = rng.uniform(-1.0, 1.0);
  auto out = t.attention(t.constant({n, d}, q), t.constant({n, d}, k), t.constant({n, d}, v), 1);

  const double alpha = 1.0 / std::sqrt(double(d));
  for (int i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double mx = -1e300;
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int e = 0; e < d; ++e) acc += q[i * d + e] * k[j * d + e];
      s[j] = acc * alpha;
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (int j = 0; j < n; ++j) z += std::exp(s[j] - mx);
    for (int e = 0; e < d; ++e) {
      double o = 0;
      for (int j = 0; j < n; ++j) o += std::exp(s[j] - mx) / z * v[j * d + e];
      CHECK(out.data()[i * d + e] == doctest::Approx(o).epsilon(1e-10));
    }
  }
}

TEST_CASE("adamw update rules") {
  Param<float> p({2});
  p.value = {1.0f, -2.0f};
  {
    AdamW<float>::Config cfg;
    cfg.weight_decay = 0.0;
    AdamW<float> opt({&p}, cfg);
    p.zero_grad();
    opt.step(0.5);
    CHECK(p.value == std::vector<float>{1.0f, -2.0f});  // zero grad, zero decay
  }
  {
    AdamW<float>::Config cfg;
    cfg.weight_decay = 0.05;
    AdamW<float> opt({&p}, cfg);
    p.zero_grad();
    opt.step(1.0);
    CHECK(p.value[0] == doctest::Approx(1.0f * 0.95f));
    CHECK(p.value[1] == doctest::Approx(-2.0f * 0.95f));
  }
  {
    Param<float> broken;
    broken.value = {1.0f};
    AdamW<float> opt({&broken});
    CHECK_THROWS_AS(opt.step(0.1), std::runtime_error);
  }
}

TEST_CASE("adamw is deterministic bit for bit") {
  auto run = [] {
    Rng rng(42);
    Param<float> p({16});
    for (auto& v : p.value) v = float(rng.uniform(-1, 1));
    AdamW<float> opt({&p});
    for (int step = 0; step < 25; ++step) {
      for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] = float(rng.uniform(-1, 1));
      opt.step(1e-2);
      p.zero_grad();
    }
    return p.value;
  };
  auto a = run();
  auto b = run();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("cosine warmup schedule") {
  const double base = 0.12;
  CHECK(cosine_warmup_lr(0, 10, 100, base) == 0.0);
  CHECK(cosine_warmup_lr(10, 10, 100, base) == doctest::Approx(base));
  CHECK(cosine_warmup_lr(55, 10, 100, base) == doctest::Approx(base / 2));  // cosine midpoint
  CHECK(cosine_warmup_lr(100, 10, 100, base) == doctest::Approx(0.0));
  CHECK(cosine_warmup_lr(500, 10, 100, base) == doctest::Approx(0.0));  // clamps
  CHECK(cosine_warmup_lr(5, 10, 100, base) == doctest::Approx(base * 0.5));
}
