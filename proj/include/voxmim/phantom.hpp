#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxmim/rng.hpp"

namespace voxmim {

// Synthetic volume generator with planted latent factors: a continuous age
// factor (blob radii and intensity grow monotonically with age), a binary
// class factor (compact low-amplitude bump in a fixed region), a continuous
// blob-contrast factor and a small geometric jitter factor. Behavior scores
// are linear in (age, contrast) plus noise.
struct PhantomSpec {
  std::array<int, 3> volume = {30, 36, 30};
  int patch = 6;  // volume dims must be divisible by this
  int blobs = 5;
  double age_lo = 20.0, age_hi = 80.0;
  double class_amplitude = 0.1;
  double contrast_amplitude = 0.15;
  double jitter_amplitude = 0.02;  // fraction of the smallest volume dim
  double noise_sigma = 0.02;       // voxel noise std; also scales behavior noise
  std::vector<std::vector<double>> behavior_weights = {{1.0, 0.0}, {0.0, 1.0}, {0.0, 0.0}};
  std::vector<std::string> behavior_names = {"age_score", "contrast_score", "noise_score"};

  void validate() const;
};

struct Phantom {
  std::vector<float> volume;  // values in [0,1]
  double age = 0.0;
  int label = 0;
  std::vector<double> behavior;
  uint64_t seed = 0;
  // planted latents, kept for ground-truth checks
  double contrast = 0.0;
  double jitter = 0.0;
};

Phantom generate_phantom(const PhantomSpec& spec, uint64_t seed);
// forced age/label variant used by the balanced dataset builder and tests
Phantom generate_phantom(const PhantomSpec& spec, uint64_t seed, double age, int label);

// balanced labels (counts differ by at most one) and stratified ages covering
// [age_lo, age_hi]
std::vector<Phantom> build_dataset(const PhantomSpec& spec, int n, uint64_t seed);

// k disjoint test folds covering 0..n-1, sizes differing by at most one
std::vector<std::vector<int>> kfold_split(int n, int k, uint64_t seed);

// fixed fractional center/radius of the class-effect region
struct ClassRegion {
  std::array<double, 3> center;
  double radius;  // voxels
};
ClassRegion class_region(const PhantomSpec& spec);

}  // namespace voxmim
