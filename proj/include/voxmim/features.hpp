#pragma once

#include <vector>

#include "voxmim/encoder.hpp"
#include "voxmim/stats.hpp"

namespace voxmim {

// Frozen-encoder features for the analysis pipeline: the full unmasked token
// set (no guider) runs through the encoder and each layer's tokens are
// mean-pooled, giving one (n_samples, dim) matrix per layer.
std::vector<DMatrix> extract_layer_features(Encoder<float>& enc,
                                            const std::vector<std::vector<float>>& patch_rows,
                                            int threads = 1);

}  // namespace voxmim
