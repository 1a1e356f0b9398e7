#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "voxmim/grad_check.hpp"
#include "voxmim/phantom.hpp"
#include "voxmim/trainer.hpp"

using namespace voxmim;

namespace {

// 8 tokens of 8 voxels each, dim 8: small enough for finite differences
template <typename T>
PretrainModel<T> tiny_model(Rng& rng, AblationMode mode = {}, int dim = 8) {
  EncoderConfig ec;
  ec.dim = dim;
  ec.blocks = 1;
  ec.heads = 2;
  ec.mlp_ratio = 2;
  ec.patch_len = 8;
  ec.max_tokens = 8;
  PretrainConfig pc;
  pc.mode = mode;
  pc.disc_dim = 8;
  pc.disc_heads = 2;
  pc.disc_blocks = 2;
  PretrainModel<T> m;
  m.init(ec, pc, PatchGrid({4, 4, 4}, 2), rng);
  return m;
}

template <typename T>
std::vector<T> random_patchset(Rng& rng, const PatchGrid& g) {
  std::vector<T> v(static_cast<size_t>(g.count()) * g.patch_len());
  for (auto& x : v) x = static_cast<T>(rng.uniform());
  return v;
}

MaskPlan fixed_plan(int n, double ratio, uint64_t seed) {
  Rng rng(seed);
  return sample_mask(n, ratio, rng);
}

}  // namespace

TEST_CASE("dual projection heads: identical weights give identical embeddings") {
  Rng rng(1);
  auto m = tiny_model<float>(rng);
  m.h_a2 = m.h_a1;  // same weights
  Tape<float> t;
  auto plan = fixed_plan(8, 0.75, 3);
  auto patches = random_patchset<float>(rng, m.grid);
  std::vector<float> vis;
  for (int i : plan.visible)
    vis.insert(vis.end(), patches.begin() + i * 8, patches.begin() + (i + 1) * 8);
  auto y = m.encode_visible(t, t.constant({int(plan.visible.size()), 8}, vis), plan);
  auto a = m.branch_a(t, y, plan);
  CHECK(a.z1.data() == a.z2.data());
  // Eq-(2)-style subtraction of two identical decoder passes is exactly zero
  for (float v : a.masked_preds.data()) CHECK(v == 0.0f);
}

TEST_CASE("dual projection heads: zero weights and bias give zero embeddings") {
  Rng rng(2);
  auto m = tiny_model<float>(rng);
  for (auto* p : {&m.h_a1.fc1.w, &m.h_a1.fc1.b, &m.h_a1.fc2.w, &m.h_a1.fc2.b})
    std::fill(p->value.begin(), p->value.end(), 0.0f);
  Tape<float> t;
  auto zin = t.zeros({3, 8});
  auto z = m.h_a1(t, zin);
  for (float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("gradient flows into both projection heads") {
  Rng rng(3);
  auto m = tiny_model<float>(rng);
  Tape<float> t;
  auto plan = fixed_plan(8, 0.75, 4);
  auto patches = random_patchset<float>(rng, m.grid);
  auto distorted = gather_patches(patches, 8, plan.visible);
  auto losses = pretrain_sample_forward(m, t, patches, distorted, plan, 0.1f, false);
  auto total = total_pretrain_loss(t, losses.sd, losses.pixel, losses.age, losses.adv_g,
                                   m.cfg.weights, m.cfg.mode);
  t.backward(total);
  auto grad_norm = [](const Param<float>& p) {
    double s = 0;
    for (float g : p.grad) s += double(g) * g;
    return s;
  };
  CHECK(grad_norm(m.h_a1.fc1.w) > 0.0);
  CHECK(grad_norm(m.h_a2.fc1.w) > 0.0);
}

TEST_CASE("semantic diversity loss at zero embeddings is 2 log 2") {
  Tape<float> t;
  auto z = t.zeros({3, 4});
  auto loss = semantic_diversity_loss(t, z, z);
  CHECK(loss.item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("semantic diversity positive term vanishes as z1 grows") {
  Tape<double> t;
  // one strongly self-similar token: sigmoid(G) -> 1, -log sigmoid -> 0
  auto big = t.constant({1, 2}, {40.0, 0.0});
  auto z2 = t.zeros({1, 2});
  auto loss = semantic_diversity_loss(t, big, z2);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-4));
}

TEST_CASE("semantic diversity grad_check on random (3,4) inputs") {
  Rng rng(4);
  Param<double> z1({3, 4}), z2({3, 4});
  for (auto& v : z1.value) v = rng.uniform(-1.0, 1.0);
  for (auto& v : z2.value) v = rng.uniform(-1.0, 1.0);
  auto make_loss = [&](Tape<double>& t) {
    return semantic_diversity_loss(t, t.leaf(z1), t.leaf(z2));
  };
  CHECK(grad_check(make_loss, {&z1, &z2}) < 1e-5);
  auto make_loss_nodiag = [&](Tape<double>& t) {
    return semantic_diversity_loss(t, t.leaf(z1), t.leaf(z2), true);
  };
  CHECK(grad_check(make_loss_nodiag, {&z1, &z2}) < 1e-5);
}

TEST_CASE("branch A produces one prediction row per masked patch") {
  Rng rng(5);
  auto m = tiny_model<float>(rng);
  Tape<float> t;
  auto plan = fixed_plan(8, 0.75, 7);
  REQUIRE(plan.masked.size() == 6);
  auto patches = random_patchset<float>(rng, m.grid);
  std::vector<float> vis;
  for (int i : plan.visible)
    vis.insert(vis.end(), patches.begin() + i * 8, patches.begin() + (i + 1) * 8);
  auto y = m.encode_visible(t, t.constant({2, 8}, vis), plan);
  auto a = m.branch_a(t, y, plan);
  CHECK(a.masked_preds.shape() == Shape{6, 8});
}

TEST_CASE("branch B produces one restoration row per visible patch") {
  Rng rng(6);
  AblationMode mode;
  auto m = tiny_model<float>(rng, mode);
  Tape<float> t;
  auto plan = fixed_plan(8, 0.75, 8);
  std::vector<float> distorted(2 * 8, 0.3f);
  auto restored = m.branch_b(t, t.constant({2, 8}, distorted), plan);
  CHECK(restored.shape() == Shape{2, 8});
}

TEST_CASE("a small branch-B model can learn to restore a fixed sample") {
  // identity distortion; trainable capacity exists so the restoration error
  // must fall far below its starting point
  Rng rng(7);
  auto m = tiny_model<float>(rng);
  auto plan = fixed_plan(8, 0.75, 9);
  auto patches = random_patchset<float>(rng, m.grid);
  std::vector<float> vis;
  for (int i : plan.visible)
    vis.insert(vis.end(), patches.begin() + i * 8, patches.begin() + (i + 1) * 8);

  ParamRegistry<float> reg;
  m.enc.reg(reg);
  m.h_b.reg(reg, "h_b");
  reg.add(m.dec_b_pos, "dec_b.pos");
  m.dec_b_blk.reg(reg, "dec_b.block");
  m.dec_b_pix.reg(reg, "dec_b.pix");
  AdamW<float> opt(reg.list(), {});
  double first = -1, last = -1;
  for (int it = 0; it < 300; ++it) {
    Tape<float> t;
    auto restored = m.branch_b(t, t.constant({2, 8}, vis), plan);
    auto loss = t.mse(restored, t.constant({2, 8}, vis));
    if (first < 0) first = loss.item();
    last = loss.item();
    reg.zero_grad();
    t.backward(loss);
    opt.step(3e-3);
  }
  CHECK(last < 0.1 * first);
}

TEST_CASE("age prediction: zero head weights predict the bias everywhere") {
  Rng rng(8);
  auto m = tiny_model<float>(rng);
  std::fill(m.age_out.w.value.begin(), m.age_out.w.value.end(), 0.0f);
  m.age_out.b.value = {0.37f};
  Tape<float> t;
  auto plan = fixed_plan(8, 0.75, 11);
  auto patches = random_patchset<float>(rng, m.grid);
  std::vector<float> vis;
  for (int i : plan.visible)
    vis.insert(vis.end(), patches.begin() + i * 8, patches.begin() + (i + 1) * 8);
  auto y = m.encode_visible(t, t.constant({2, 8}, vis), plan);
  CHECK(m.predict_age(t, y).item() == doctest::Approx(0.37f));

  // pred == target -> zero loss
  auto pred = t.constant({1}, {0.37f});
  CHECK(t.mse(pred, t.constant({1}, {0.37f})).item() == 0.0f);
}

TEST_CASE("adversarial losses at an uninformative discriminator") {
  Rng rng(9);
  auto m = tiny_model<float>(rng);
  // zero the output head: logit 0, D == 0.5 for any input
  std::fill(m.disc.out.w.value.begin(), m.disc.out.w.value.end(), 0.0f);
  std::fill(m.disc.out.b.value.begin(), m.disc.out.b.value.end(), 0.0f);
  Tape<float> t;
  auto patches = random_patchset<float>(rng, m.grid);
  auto real = t.constant({8, 8}, patches);
  auto fake = t.constant({8, 8}, std::vector<float>(64, 0.2f));
  auto d_real = m.disc.prob(t, real);
  auto d_fake = m.disc.prob(t, fake);
  CHECK(d_real.item() == doctest::Approx(0.5f));
  auto loss_d = discriminator_loss(t, d_real, d_fake);
  CHECK(loss_d.item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
  auto loss_g = generator_adv_loss(t, d_fake);
  CHECK(loss_g.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("perfect discriminator drives loss_D toward zero and output stays in (0,1)") {
  Tape<float> t;
  auto d_real = t.clamp(t.constant({}, {1.0f}), 1e-7f, 1.0f - 1e-7f);
  auto d_fake = t.clamp(t.constant({}, {0.0f}), 1e-7f, 1.0f - 1e-7f);
  auto loss_d = discriminator_loss(t, d_real, d_fake);
  CHECK(loss_d.item() < 1e-5f);
  CHECK(std::isfinite(loss_d.item()));
}

TEST_CASE("discriminator update sees no gradient from generator parameters") {
  Rng rng(10);
  auto m = tiny_model<float>(rng);
  auto patches = random_patchset<float>(rng, m.grid);
  auto plan = fixed_plan(8, 0.75, 13);

  Tape<float> tg;
  auto losses = pretrain_sample_forward(m, tg, patches, [&] {
    auto vis = gather_patches(patches, 8, plan.visible);
    return vis;  // identity distortion stand-in
  }(), plan, 0.0f, false);

  // discriminator loss on a separate tape with the fake detached
  Tape<float> td;
  auto real = td.constant({8, 8}, patches);
  auto fake = td.constant(losses.full.shape(), losses.full.data());
  auto loss_d = discriminator_loss(td, m.disc.prob(td, real), m.disc.prob(td, fake));

  ParamRegistry<float> gen_reg, disc_reg;
  m.reg_generator(gen_reg);
  m.reg_discriminator(disc_reg);
  gen_reg.zero_grad();
  disc_reg.zero_grad();
  td.backward(loss_d);
  double gen_grad = 0, disc_grad = 0;
  for (auto* p : gen_reg.list())
    for (float g : p->grad) gen_grad += std::fabs(g);
  for (auto* p : disc_reg.list())
    for (float g : p->grad) disc_grad += std::fabs(g);
  CHECK(gen_grad == 0.0);
  CHECK(disc_grad > 0.0);
}

TEST_CASE("total loss weighting, linearity, and errors") {
  Tape<double> t;
  auto one = t.scalar(1.0);
  LossWeights w;  // paper defaults
  AblationMode mode;
  auto total = total_pretrain_loss(t, one, one, one, one, w, mode);
  CHECK(total.item() == doctest::Approx(0.995).epsilon(1e-12));

  LossWeights zero{0, 0, 0, 0};
  CHECK(total_pretrain_loss(t, one, one, one, one, zero, mode).item() == 0.0);

  // doubling one weight adds exactly that component, to 1e-9
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    double lsd = rng.uniform(0, 2), lpx = rng.uniform(0, 2), lag = rng.uniform(0, 2),
           lad = rng.uniform(0, 2);
    auto a = t.scalar(lsd);
    auto b = t.scalar(lpx);
    auto c = t.scalar(lag);
    auto d = t.scalar(lad);
    LossWeights w2 = w;
    w2.age *= 2;
    const double base = total_pretrain_loss(t, a, b, c, d, w, mode).item();
    const double doubled = total_pretrain_loss(t, a, b, c, d, w2, mode).item();
    CHECK(std::fabs(doubled - base - w.age * lag) < 1e-9);
  }

  LossWeights bad;
  bad.pixel = -0.1;
  CHECK_THROWS_AS(total_pretrain_loss(t, one, one, one, one, bad, mode),
                  std::invalid_argument);
}

TEST_CASE("ablation modes build the expected task sets") {
  const bool expected[5][4] = {
      {false, false, false, false},  // mode0
      {true, false, false, false},   // mode1
      {true, true, false, false},    // mode2
      {true, true, true, false},     // mode3
      {true, true, true, true},      // mode4
  };
  for (int i = 0; i <= 4; ++i) {
    auto m = AblationMode::from_index(i);
    CHECK(m.res_a == expected[i][0]);
    CHECK(m.age == expected[i][1]);
    CHECK(m.res_b == expected[i][2]);
    CHECK(m.adv == expected[i][3]);
  }
  CHECK_FALSE(AblationMode::from_index(0).any());
  CHECK_THROWS_AS(AblationMode::from_index(5), std::invalid_argument);
}

TEST_CASE("with branch B disabled the assembly equals ground truth at visible positions") {
  Rng rng(12);
  AblationMode mode;
  mode.res_b = false;
  mode.adv = false;
  auto m = tiny_model<float>(rng, mode);
  Tape<float> t;
  auto plan = fixed_plan(8, 0.75, 17);
  auto patches = random_patchset<float>(rng, m.grid);
  auto losses = pretrain_sample_forward(m, t, patches, {}, plan, 0.0f, false);
  const auto& full = losses.full.data();
  for (int v : plan.visible)
    for (int j = 0; j < 8; ++j)
      CHECK(full[static_cast<size_t>(v) * 8 + j] == patches[static_cast<size_t>(v) * 8 + j]);
}

TEST_CASE("grad_check of the full joint objective on a tiny config") {
  Rng rng(13);
  auto m = tiny_model<double>(rng);
  // condition the init so every gradient is resolvable by finite differences
  ParamRegistry<double> all;
  m.reg_all(all);
  Rng init_rng(97);
  testsupport::uniform_reinit(all, init_rng, 0.3);

  // pool three mask/input draws: a weight direction that one mask leaves
  // unexcited (and hence with a sub-noise gradient) is excited by another
  struct Inst {
    MaskPlan plan;
    std::vector<double> patches, distorted;
    double age;
  };
  std::vector<Inst> insts;
  Rng prng(303);
  for (int k = 0; k < 3; ++k) {
    Inst in;
    in.plan = sample_mask(8, 0.5, prng);
    in.patches.resize(64);
    for (auto& x : in.patches) x = prng.uniform();
    for (int i : in.plan.visible)
      in.distorted.insert(in.distorted.end(), in.patches.begin() + i * 8,
                          in.patches.begin() + (i + 1) * 8);
    for (auto& x : in.distorted) x = 0.9 * x + 0.05;
    in.age = k == 0 ? -1.0 : (k == 1 ? 0.8 : 0.2);
    insts.push_back(std::move(in));
  }
  auto make_loss = [&](Tape<double>& t) {
    Tensor<double> acc = t.scalar(0.0);
    for (auto& in : insts) {
      auto L = pretrain_sample_forward(m, t, in.patches, in.distorted, in.plan, in.age, true);
      acc = t.add(acc, total_pretrain_loss(t, L.sd, L.pixel, L.age, L.adv_g, m.cfg.weights,
                                           m.cfg.mode));
    }
    return t.scale(acc, 1.0 / 3.0);
  };
  ParamRegistry<double> gen;
  m.reg_generator(gen);
  const double err = grad_check(make_loss, gen.list(), 3e-5);
  MESSAGE("joint objective grad_check rel err: ", err);
  CHECK(err < 1e-5);
}

TEST_CASE("grad_check of the discriminator loss") {
  Rng rng(14);
  auto m = tiny_model<double>(rng);
  ParamRegistry<double> disc;
  m.reg_discriminator(disc);
  Rng init_rng(98);
  testsupport::uniform_reinit(disc, init_rng, 0.5);
  auto real = random_patchset<double>(rng, m.grid);
  auto fake = random_patchset<double>(rng, m.grid);
  auto make_loss = [&](Tape<double>& t) {
    return discriminator_loss(t, m.disc.prob(t, t.constant({8, 8}, real)),
                              m.disc.prob(t, t.constant({8, 8}, fake)));
  };
  CHECK(grad_check(make_loss, disc.list(), 3e-5) < 1e-5);
}

TEST_CASE("trainer refuses mode0 and flags non-finite components") {
  Rng rng(15);
  auto m = tiny_model<float>(rng, AblationMode::from_index(0));
  CHECK_THROWS_WITH_AS(PretrainTrainer(m, 1, 1), doctest::Contains("nothing to optimize"),
                       std::invalid_argument);

  StepRecord r;
  r.pixel = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(check_finite_components(r), doctest::Contains("L_pixel"),
                       std::runtime_error);
}

TEST_CASE("short training run lowers the restoration loss and is bit-reproducible") {
  auto run = [](int threads) {
    Rng rng(16);
    auto m = tiny_model<float>(rng);
    m.cfg.epochs = 30;
    m.cfg.warmup_epochs = 3;
    m.cfg.batch_size = 4;
    PhantomSpec spec;
    spec.volume = {4, 4, 4};
    spec.patch = 2;
    auto data = build_dataset(spec, 8, 21);
    std::vector<std::vector<float>> rows;
    std::vector<double> ages;
    for (auto& p : data) {
      rows.push_back(patchify(p.volume, m.grid));
      ages.push_back(p.age);
    }
    std::vector<StepRecord> recs;
    PretrainTrainer tr(m, 33, threads);
    tr.fit(rows, ages, [&](const StepRecord& r) { recs.push_back(r); });
    return recs;
  };
  auto recs = run(1);
  REQUIRE(recs.size() == 60);  // 8 samples / batch 4 * 30 epochs
  const double first_epoch_pixel = (recs[0].pixel + recs[1].pixel) / 2;
  const double last_epoch_pixel = (recs[58].pixel + recs[59].pixel) / 2;
  CHECK(last_epoch_pixel < first_epoch_pixel);

  // fixed-order reduction: two threads reproduce the single-thread run bit for bit
  auto recs2 = run(2);
  REQUIRE(recs2.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].total == recs2[i].total);
    CHECK(recs[i].pixel == recs2[i].pixel);
    CHECK(recs[i].adv_d == recs2[i].adv_d);
  }
}
