#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "voxmim/mats.hpp"

namespace voxmim {

struct FinetuneOptions {
  int epochs = 50;
  int warmup_epochs = 2;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.05;
  int threads = 1;
  bool head_only = false;  // probe-style: freeze the encoder, train the classifier
  uint64_t shuffle_seed = 1;
};

struct FinetuneEpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

struct FinetuneEval {
  std::vector<int> predictions;
  std::vector<double> class1_scores;  // softmax probability of class 1
  std::vector<SelectionResult> selections;
  double loss = 0.0;
};

// Cross-entropy fine-tuning over MATS-selected tokens. Same determinism
// contract as pretraining: per-sample tapes, fixed-order gradient reduction.
class FinetuneTrainer {
 public:
  FinetuneTrainer(FinetuneModel<float>& model, const FinetuneOptions& opts);

  void fit(const std::vector<std::vector<float>>& patch_rows, const std::vector<int>& labels,
           const std::function<void(const FinetuneEpochStats&)>& on_epoch = {});

  FinetuneEval evaluate(const std::vector<std::vector<float>>& patch_rows,
                        const std::vector<int>& labels) const;

 private:
  FinetuneModel<float>& model_;
  FinetuneOptions opts_;
  ParamRegistry<float> reg_;
  std::optional<AdamW<float>> opt_;
  int64_t step_ = 0;
};

}  // namespace voxmim
