#include "voxmim/finetune.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace voxmim {

namespace {

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

}  // namespace

FinetuneTrainer::FinetuneTrainer(FinetuneModel<float>& model, const FinetuneOptions& opts)
    : model_(model), opts_(opts) {
  if (opts_.head_only)
    model_.reg_head_only(reg_);
  else
    model_.reg(reg_);
  AdamW<float>::Config oc;
  oc.weight_decay = opts_.weight_decay;
  opt_.emplace(reg_.list(), oc);
}

void FinetuneTrainer::fit(const std::vector<std::vector<float>>& patch_rows,
                          const std::vector<int>& labels,
                          const std::function<void(const FinetuneEpochStats&)>& on_epoch) {
  if (patch_rows.empty() || patch_rows.size() != labels.size())
    throw std::invalid_argument("finetune fit: empty dataset or label count mismatch");
  for (int l : labels)
    if (l < 0 || l >= model_.n_classes)
      throw std::invalid_argument("finetune fit: label " + std::to_string(l) +
                                  " outside class set 0.." +
                                  std::to_string(model_.n_classes - 1));
  const int n = static_cast<int>(patch_rows.size());
  const int bs = std::min(opts_.batch_size, n);
  const int steps_per_epoch = (n + bs - 1) / bs;
  const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * opts_.epochs;
  const int64_t warmup_steps = static_cast<int64_t>(steps_per_epoch) * opts_.warmup_epochs;

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < opts_.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(opts_.shuffle_seed, "ft_epoch", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    int correct = 0;
    double lr = 0.0;
    for (int start = 0; start < n; start += bs) {
      const int cur = std::min(bs, n - start);
      lr = cosine_warmup_lr(step_, warmup_steps, total_steps, opts_.lr);
      struct Work {
        Tape<float> tape;
        Tensor<float> loss;
        int pred = 0;
      };
      std::vector<Work> work(static_cast<size_t>(cur));
      parallel_over(cur, opts_.threads, [&](int i) {
        const int idx = order[static_cast<size_t>(start + i)];
        Work& w = work[static_cast<size_t>(i)];
        auto out = model_.forward(w.tape, patch_rows[static_cast<size_t>(idx)]);
        const auto& lg = out.logits.data();
        w.pred = 0;
        for (int c = 1; c < model_.n_classes; ++c)
          if (lg[static_cast<size_t>(c)] > lg[static_cast<size_t>(w.pred)]) w.pred = c;
        w.loss = w.tape.cross_entropy(out.logits, {labels[static_cast<size_t>(idx)]});
        w.tape.backward(w.loss, /*into_params=*/false);
      });
      const float inv = 1.0f / static_cast<float>(cur);
      for (int i = 0; i < cur; ++i) {
        const int idx = order[static_cast<size_t>(start + i)];
        epoch_loss += work[static_cast<size_t>(i)].loss.item();
        correct += work[static_cast<size_t>(i)].pred == labels[static_cast<size_t>(idx)] ? 1 : 0;
        for (auto* p : reg_.list())
          if (const auto* g = work[static_cast<size_t>(i)].tape.param_grad(*p))
            kernels::f32().axpy(inv, g->data(), p->grad.data(), p->grad.size());
      }
      if (!std::isfinite(epoch_loss))
        throw std::runtime_error("finetune: non-finite loss at step " + std::to_string(step_));
      opt_->step(lr);
      reg_.zero_grad();
      ++step_;
    }
    if (on_epoch)
      on_epoch(FinetuneEpochStats{epoch, epoch_loss / n, static_cast<double>(correct) / n, lr});
  }
}

FinetuneEval FinetuneTrainer::evaluate(const std::vector<std::vector<float>>& patch_rows,
                                       const std::vector<int>& labels) const {
  const int n = static_cast<int>(patch_rows.size());
  FinetuneEval ev;
  ev.predictions.resize(static_cast<size_t>(n));
  ev.class1_scores.resize(static_cast<size_t>(n));
  ev.selections.resize(static_cast<size_t>(n));
  std::vector<double> losses(static_cast<size_t>(n), 0.0);
  FinetuneModel<float>& m = model_;
  parallel_over(n, opts_.threads, [&](int s) {
    Tape<float> t;
    t.set_grad_enabled(false);
    auto out = m.forward(t, patch_rows[static_cast<size_t>(s)]);
    const auto& lg = out.logits.data();
    int pred = 0;
    for (int c = 1; c < m.n_classes; ++c)
      if (lg[static_cast<size_t>(c)] > lg[static_cast<size_t>(pred)]) pred = c;
    ev.predictions[static_cast<size_t>(s)] = pred;
    auto probs = t.softmax_rows(out.logits);
    ev.class1_scores[static_cast<size_t>(s)] =
        m.n_classes > 1 ? probs.data()[1] : probs.data()[0];
    ev.selections[static_cast<size_t>(s)] = out.selection;
    if (!labels.empty())
      losses[static_cast<size_t>(s)] =
          t.cross_entropy(out.logits, {labels[static_cast<size_t>(s)]}).item();
  });
  ev.loss = std::accumulate(losses.begin(), losses.end(), 0.0) / std::max(1, n);
  return ev;
}

}  // namespace voxmim
