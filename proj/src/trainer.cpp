#include "voxmim/trainer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace voxmim {

void check_finite_components(const StepRecord& r) {
  const struct {
    const char* name;
    double v;
  } parts[] = {{"L_sd", r.sd},       {"L_pixel", r.pixel}, {"L_age", r.age},
               {"L_adv_D", r.adv_d}, {"L_adv_G", r.adv_g}, {"total", r.total}};
  for (const auto& p : parts)
    if (!std::isfinite(p.v))
      throw std::runtime_error(std::string("pretrain step: non-finite ") + p.name + " at step " +
                               std::to_string(r.step));
}

PretrainTrainer::PretrainTrainer(PretrainModel<float>& model, uint64_t mask_seed, int threads)
    : model_(model), mask_rng_(derive_seed(mask_seed, "mask_stream")), mask_seed_(mask_seed) {
  if (!model.cfg.mode.any())
    throw std::invalid_argument("pretrain: nothing to optimize, all tasks disabled (mode0)");
  model.cfg.weights.validate();
  model_.reg_generator(reg_g_);
  model_.reg_discriminator(reg_d_);
  AdamW<float>::Config oc;
  oc.weight_decay = model.cfg.weight_decay;
  opt_g_.emplace(reg_g_.list(), oc);
  if (model.cfg.mode.adv) opt_d_.emplace(reg_d_.list(), oc);
  threads_ = threads > 0 ? threads
                         : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

namespace {

// run fn(s) for s in [0, n) across workers; each sample is touched by exactly
// one worker and the caller merges results in sample order afterwards
template <typename Fn>
void parallel_over(int n, int threads, const Fn& fn) {
  const int t = std::min(threads, n);
  if (t <= 1) {
    for (int s = 0; s < n; ++s) fn(s);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(t));
  for (int w = 0; w < t; ++w)
    pool.emplace_back([&, w] {
      for (int s = w; s < n; s += t) fn(s);
    });
  for (auto& th : pool) th.join();
}

struct SampleWork {
  Tape<float> tape_g;
  Tape<float> tape_d;
  SampleLosses<float> losses;
  Tensor<float> loss_d;
  Tensor<float> total;
  MaskPlan plan;
  std::vector<float> distorted_vis;
  float age_norm = 0.0f;
};

}  // namespace

StepRecord PretrainTrainer::run_step(const std::vector<const std::vector<float>*>& batch,
                                     const std::vector<float>& age_norms, double lr) {
  const int b = static_cast<int>(batch.size());
  const bool adv = model_.cfg.mode.adv;
  const float inv_b = 1.0f / static_cast<float>(b);
  std::vector<SampleWork> work(static_cast<size_t>(b));

  // per-sample masks and distortions drawn sequentially up front so the
  // stream is independent of the thread count
  for (int s = 0; s < b; ++s) {
    SampleWork& w = work[s];
    w.plan = sample_mask(model_.grid.count(), model_.cfg.mask_ratio, mask_rng_);
    w.age_norm = age_norms[static_cast<size_t>(s)];
    if (model_.cfg.mode.res_b) {
      auto vis = gather_patches(*batch[static_cast<size_t>(s)], model_.grid.patch_len(),
                                w.plan.visible);
      w.distorted_vis = bezier_transform(vis, model_.cfg.nonlinear_rate, mask_rng_);
    }
  }

  // phase 1: generator forward, discriminator loss on detached fakes
  parallel_over(b, threads_, [&](int s) {
    SampleWork& w = work[static_cast<size_t>(s)];
    w.losses = pretrain_sample_forward(model_, w.tape_g, *batch[static_cast<size_t>(s)],
                                       w.distorted_vis, w.plan, w.age_norm,
                                       /*with_adv_g=*/false);
    if (adv) {
      Tensor<float> real = w.tape_d.constant({model_.grid.count(), model_.grid.patch_len()},
                                             *batch[static_cast<size_t>(s)]);
      Tensor<float> fake = w.tape_d.constant(w.losses.full.shape(), w.losses.full.data());
      w.loss_d = discriminator_loss(w.tape_d, model_.disc.prob(w.tape_d, real),
                                    model_.disc.prob(w.tape_d, fake));
      w.tape_d.backward(w.loss_d, /*into_params=*/false);
    }
  });

  StepRecord rec;
  rec.step = step_;
  rec.lr = lr;

  if (adv) {
    for (int s = 0; s < b; ++s) {
      rec.adv_d += work[static_cast<size_t>(s)].loss_d.item() * inv_b;
      for (auto* p : reg_d_.list())
        if (const auto* g = work[static_cast<size_t>(s)].tape_d.param_grad(*p))
          kernels::f32().axpy(inv_b, g->data(), p->grad.data(), p->grad.size());
    }
    opt_d_->step(lr);
    reg_d_.zero_grad();
  }

  // phase 2: generator adversarial term against the updated discriminator,
  // then the joint objective
  parallel_over(b, threads_, [&](int s) {
    SampleWork& w = work[static_cast<size_t>(s)];
    if (adv) w.losses.adv_g = generator_adv_loss(w.tape_g, model_.disc.prob(w.tape_g, w.losses.full));
    w.total = total_pretrain_loss(w.tape_g, w.losses.sd, w.losses.pixel, w.losses.age,
                                  w.losses.adv_g, model_.cfg.weights, model_.cfg.mode);
    w.tape_g.backward(w.total, /*into_params=*/false);
  });

  for (int s = 0; s < b; ++s) {
    SampleWork& w = work[static_cast<size_t>(s)];
    if (w.losses.sd.valid()) rec.sd += w.losses.sd.item() * inv_b;
    if (w.losses.pixel.valid()) rec.pixel += w.losses.pixel.item() * inv_b;
    if (w.losses.age.valid()) rec.age += w.losses.age.item() * inv_b;
    if (w.losses.adv_g.valid()) rec.adv_g += w.losses.adv_g.item() * inv_b;
    rec.total += w.total.item() * inv_b;
    for (auto* p : reg_g_.list())
      if (const auto* g = w.tape_g.param_grad(*p))
        kernels::f32().axpy(inv_b, g->data(), p->grad.data(), p->grad.size());
  }
  check_finite_components(rec);
  opt_g_->step(lr);
  reg_g_.zero_grad();
  if (adv) reg_d_.zero_grad();  // phase-2 flow-through grads are discarded
  ++step_;
  return rec;
}

void PretrainTrainer::fit(const std::vector<std::vector<float>>& patch_rows,
                          const std::vector<double>& ages,
                          const std::function<void(const StepRecord&)>& on_step) {
  if (patch_rows.empty() || patch_rows.size() != ages.size())
    throw std::invalid_argument("pretrain fit: empty dataset or age count mismatch");
  const int n = static_cast<int>(patch_rows.size());
  double mean = std::accumulate(ages.begin(), ages.end(), 0.0) / n;
  double var = 0;
  for (double a : ages) var += (a - mean) * (a - mean);
  var /= n;
  age_mean_ = mean;
  age_std_ = var > 0 ? std::sqrt(var) : 1.0;

  const int bs = std::min(model_.cfg.batch_size, n);
  const int steps_per_epoch = (n + bs - 1) / bs;
  const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * model_.cfg.epochs;
  const int64_t warmup_steps = static_cast<int64_t>(steps_per_epoch) * model_.cfg.warmup_epochs;
  const double base_lr = model_.cfg.effective_base_lr();

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < model_.cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(mask_seed_, "epoch_order", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());
    for (int start = 0; start < n; start += bs) {
      const int cur = std::min(bs, n - start);
      std::vector<const std::vector<float>*> batch(static_cast<size_t>(cur));
      std::vector<float> age_norms(static_cast<size_t>(cur));
      for (int i = 0; i < cur; ++i) {
        const int idx = order[static_cast<size_t>(start + i)];
        batch[static_cast<size_t>(i)] = &patch_rows[static_cast<size_t>(idx)];
        age_norms[static_cast<size_t>(i)] =
            static_cast<float>((ages[static_cast<size_t>(idx)] - age_mean_) / age_std_);
      }
      const double lr = cosine_warmup_lr(step_, warmup_steps, total_steps, base_lr);
      StepRecord rec = run_step(batch, age_norms, lr);
      if (on_step) on_step(rec);
    }
  }
}

std::vector<double> PretrainTrainer::predict_ages(
    const std::vector<std::vector<float>>& patch_rows, uint64_t eval_seed) const {
  std::vector<double> out(patch_rows.size());
  PretrainModel<float>& m = model_;
  parallel_over(static_cast<int>(patch_rows.size()), threads_, [&](int s) {
    Rng rng(derive_seed(eval_seed, "eval_mask", static_cast<uint64_t>(s)));
    MaskPlan plan = sample_mask(m.grid.count(), m.cfg.mask_ratio, rng);
    Tape<float> t;
    t.set_grad_enabled(false);
    auto vis =
        gather_patches(patch_rows[static_cast<size_t>(s)], m.grid.patch_len(), plan.visible);
    Tensor<float> x_vis =
        t.constant({static_cast<int>(plan.visible.size()), m.grid.patch_len()}, vis);
    Tensor<float> y = m.encode_visible(t, x_vis, plan);
    const double pred = m.predict_age(t, y).item();
    out[static_cast<size_t>(s)] = pred * age_std_ + age_mean_;
  });
  return out;
}

}  // namespace voxmim
