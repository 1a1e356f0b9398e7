#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "voxmim/pretrain.hpp"

namespace voxmim {

// One sample's loss graph. Inactive tasks leave their tensors invalid.
template <typename T>
struct SampleLosses {
  Tensor<T> sd, pixel, age, adv_g;
  Tensor<T> full;    // assembled (N, patch_len) prediction, when pixel or adv is active
  Tensor<T> x_real;  // ground-truth patch matrix constant
};

// Builds the generator-side graph for one sample. distorted_vis is consumed
// only when branch B is active; with_adv_g attaches the generator adversarial
// term immediately (the trainer defers it until after the discriminator step).
template <typename T>
SampleLosses<T> pretrain_sample_forward(PretrainModel<T>& m, Tape<T>& t,
                                        const std::vector<T>& patches,
                                        const std::vector<T>& distorted_vis,
                                        const MaskPlan& plan, T age_target_norm,
                                        bool with_adv_g) {
  const int plen = m.grid.patch_len();
  const int n_vis = static_cast<int>(plan.visible.size());
  const int n_mask = static_cast<int>(plan.masked.size());
  const AblationMode& mode = m.cfg.mode;

  SampleLosses<T> out;
  out.x_real = t.constant({m.grid.count(), plen}, patches);

  std::vector<T> vis_data, mask_data;
  vis_data.reserve(static_cast<size_t>(n_vis) * plen);
  for (int idx : plan.visible)
    vis_data.insert(vis_data.end(), patches.begin() + static_cast<size_t>(idx) * plen,
                    patches.begin() + static_cast<size_t>(idx + 1) * plen);
  Tensor<T> x_vis = t.constant({n_vis, plen}, vis_data);

  Tensor<T> y_vis;
  if (mode.res_a || mode.age) y_vis = m.encode_visible(t, x_vis, plan);

  Tensor<T> masked_src, visible_src;
  if (mode.res_a) {
    auto a = m.branch_a(t, y_vis, plan);
    out.sd = semantic_diversity_loss(t, a.z1, a.z2, m.cfg.sd_exclude_diagonal);
    masked_src = a.masked_preds;
  } else {
    mask_data.reserve(static_cast<size_t>(n_mask) * plen);
    for (int idx : plan.masked)
      mask_data.insert(mask_data.end(), patches.begin() + static_cast<size_t>(idx) * plen,
                       patches.begin() + static_cast<size_t>(idx + 1) * plen);
    masked_src = t.constant({n_mask, plen}, mask_data);
  }
  if (mode.res_b) {
    Tensor<T> distorted = t.constant({n_vis, plen}, distorted_vis);
    visible_src = m.branch_b(t, distorted, plan);
  } else {
    visible_src = x_vis;  // ground truth fills the visible positions
  }
  if (mode.age) {
    Tensor<T> pred = m.predict_age(t, y_vis);
    out.age = t.mse(t.reshape(pred, {1}), t.constant({1}, {age_target_norm}));
  }
  if (mode.needs_pixel() || mode.adv) {
    out.full = m.assemble_full(t, masked_src, visible_src, plan);
    if (mode.needs_pixel()) out.pixel = t.mse(out.full, out.x_real);
  }
  if (mode.adv && with_adv_g) out.adv_g = generator_adv_loss(t, m.disc.prob(t, out.full));
  return out;
}

struct StepRecord {
  int64_t step = 0;
  double sd = 0, pixel = 0, age = 0, adv_d = 0, adv_g = 0, total = 0, lr = 0;
};

// throws naming the first non-finite component
void check_finite_components(const StepRecord& r);

// Alternating-update trainer: one discriminator step (fake detached), then
// one joint encoder/decoder step per batch. Batch members run on independent
// tapes, in parallel when threads > 1; gradients reduce in sample order so
// results are bit-identical regardless of the thread count.
class PretrainTrainer {
 public:
  PretrainTrainer(PretrainModel<float>& model, uint64_t mask_seed, int threads);

  // patch_rows: patchified volumes; ages in years. Runs the configured number
  // of epochs, invoking on_step after every optimizer step.
  void fit(const std::vector<std::vector<float>>& patch_rows, const std::vector<double>& ages,
           const std::function<void(const StepRecord&)>& on_step = {});

  // denormalized age predictions under a fixed evaluation mask per sample
  std::vector<double> predict_ages(const std::vector<std::vector<float>>& patch_rows,
                                   uint64_t eval_seed) const;

  double age_mean() const { return age_mean_; }
  double age_std() const { return age_std_; }
  int64_t steps_taken() const { return step_; }

 private:
  PretrainModel<float>& model_;
  ParamRegistry<float> reg_g_, reg_d_;
  std::optional<AdamW<float>> opt_g_, opt_d_;
  Rng mask_rng_;
  uint64_t mask_seed_;
  int threads_;
  int64_t step_ = 0;
  double age_mean_ = 0.0, age_std_ = 1.0;

  StepRecord run_step(const std::vector<const std::vector<float>*>& batch,
                      const std::vector<float>& age_norms, double lr);
};

}  // namespace voxmim
