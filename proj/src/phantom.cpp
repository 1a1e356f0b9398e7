#include "voxmim/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace voxmim {

namespace {

// fixed fractional blob layout, cycled when spec.blobs exceeds the table
constexpr std::array<std::array<double, 3>, 8> kBlobCenters = {{
    {0.32, 0.36, 0.60},
    {0.68, 0.30, 0.38},
    {0.50, 0.68, 0.52},
    {0.30, 0.62, 0.30},
    {0.66, 0.64, 0.68},
    {0.48, 0.34, 0.30},
    {0.36, 0.50, 0.44},
    {0.62, 0.48, 0.58},
}};
constexpr std::array<double, 8> kBlobScale = {1.00, 0.85, 1.10, 0.90, 1.05, 0.80, 0.95, 1.15};

// compact bump: amp * (1 - (d/r)^2)^2 inside radius r, exactly zero outside
inline double bump(double dist2, double r, double amp) {
  const double q = dist2 / (r * r);
  if (q >= 1.0) return 0.0;
  const double u = 1.0 - q;
  return amp * u * u;
}

}  // namespace

void PhantomSpec::validate() const {
  if (patch <= 0) throw std::invalid_argument("phantom: patch size must be positive");
  for (int d : volume)
    if (d <= 0 || d % patch != 0)
      throw std::invalid_argument("phantom: volume dim " + std::to_string(d) +
                                  " not divisible by patch size " + std::to_string(patch));
  if (blobs < 1) throw std::invalid_argument("phantom: need at least one blob");
  if (noise_sigma < 0) throw std::invalid_argument("phantom: noise sigma must be >= 0");
  if (!(age_hi > age_lo)) throw std::invalid_argument("phantom: empty age range");
  if (behavior_weights.size() != behavior_names.size())
    throw std::invalid_argument("phantom: behavior weights/names size mismatch");
  for (const auto& w : behavior_weights)
    if (w.size() != 2)
      throw std::invalid_argument("phantom: behavior weights must have 2 entries (age, contrast)");
}

ClassRegion class_region(const PhantomSpec& spec) {
  const double md = std::min({spec.volume[0], spec.volume[1], spec.volume[2]});
  return ClassRegion{{0.24, 0.24, 0.24}, 0.14 * md};
}

Phantom generate_phantom(const PhantomSpec& spec, uint64_t seed, double age, int label) {
  spec.validate();
  if (label != 0 && label != 1) throw std::invalid_argument("phantom: label must be 0 or 1");
  Phantom ph;
  ph.seed = seed;
  ph.age = age;
  ph.label = label;

  // latent draws come from substreams so the voxel noise stream is identical
  // across a label flip
  Rng lat(derive_seed(seed, "latents"));
  ph.contrast = lat.uniform(-1.0, 1.0);
  ph.jitter = lat.uniform(-1.0, 1.0);

  const double age_n = (age - spec.age_lo) / (spec.age_hi - spec.age_lo);
  const int X = spec.volume[0], Y = spec.volume[1], Z = spec.volume[2];
  const double md = std::min({X, Y, Z});

  struct Blob {
    double cx, cy, cz, r, amp;
  };
  std::vector<Blob> blobs(static_cast<size_t>(spec.blobs));
  const double jit = ph.jitter * spec.jitter_amplitude * md;
  for (int b = 0; b < spec.blobs; ++b) {
    const auto& c = kBlobCenters[b % kBlobCenters.size()];
    const double scale = kBlobScale[b % kBlobScale.size()];
    const double sign = (b % 2 == 0) ? 1.0 : -1.0;
    Blob& bl = blobs[b];
    // jitter shifts alternate blobs in opposite directions
    bl.cx = c[0] * X + sign * jit;
    bl.cy = c[1] * Y + sign * 0.5 * jit;
    bl.cz = c[2] * Z - sign * jit;
    bl.r = (0.14 + 0.10 * age_n) * md * scale;
    bl.amp = (0.45 + 0.35 * age_n) * (1.0 + spec.contrast_amplitude * ph.contrast * sign);
  }
  const ClassRegion cls = class_region(spec);
  const double ccx = cls.center[0] * X, ccy = cls.center[1] * Y, ccz = cls.center[2] * Z;

  ph.volume.resize(static_cast<size_t>(X) * Y * Z);
  Rng noise(derive_seed(seed, "voxel_noise"));
  size_t w = 0;
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Y; ++y)
      for (int z = 0; z < Z; ++z, ++w) {
        double v = 0.02;  // faint background
        for (const Blob& bl : blobs) {
          const double dx = x - bl.cx, dy = y - bl.cy, dz = z - bl.cz;
          v += bump(dx * dx + dy * dy + dz * dz, bl.r, bl.amp);
        }
        if (label == 1) {
          const double dx = x - ccx, dy = y - ccy, dz = z - ccz;
          v += bump(dx * dx + dy * dy + dz * dz, cls.radius, spec.class_amplitude);
        }
        if (spec.noise_sigma > 0) v += spec.noise_sigma * noise.normal();
        ph.volume[w] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }

  const double age_z = 2.0 * age_n - 1.0;
  Rng bnoise(derive_seed(seed, "behavior_noise"));
  ph.behavior.resize(spec.behavior_weights.size());
  for (size_t k = 0; k < spec.behavior_weights.size(); ++k) {
    ph.behavior[k] = spec.behavior_weights[k][0] * age_z + spec.behavior_weights[k][1] * ph.contrast;
    if (spec.noise_sigma > 0) ph.behavior[k] += spec.noise_sigma * bnoise.normal();
  }
  return ph;
}

Phantom generate_phantom(const PhantomSpec& spec, uint64_t seed) {
  Rng draw(derive_seed(seed, "age_label"));
  const double age = draw.uniform(spec.age_lo, spec.age_hi);
  const int label = draw.uniform() < 0.5 ? 0 : 1;
  return generate_phantom(spec, seed, age, label);
}

std::vector<Phantom> build_dataset(const PhantomSpec& spec, int n, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("build_dataset: need n >= 2");
  spec.validate();
  // stratified ages in shuffled order: uniform marginal, guaranteed coverage
  std::vector<int> strata(static_cast<size_t>(n));
  std::iota(strata.begin(), strata.end(), 0);
  Rng order(derive_seed(seed, "age_order"));
  order.shuffle(strata.begin(), strata.end());
  std::vector<Phantom> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng jitter(derive_seed(seed, "age_jitter", static_cast<uint64_t>(i)));
    const double u = (strata[i] + jitter.uniform()) / n;
    const double age = spec.age_lo + (spec.age_hi - spec.age_lo) * u;
    const int label = i % 2;
    out.push_back(generate_phantom(spec, derive_seed(seed, "phantom", static_cast<uint64_t>(i)),
                                   age, label));
  }
  return out;
}

std::vector<std::vector<int>> kfold_split(int n, int k, uint64_t seed) {
  if (k < 2 || k > n) throw std::invalid_argument("kfold_split: need 2 <= k <= n, got k=" +
                                                  std::to_string(k) + " n=" + std::to_string(n));
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  std::vector<std::vector<int>> folds(static_cast<size_t>(k));
  for (int i = 0; i < n; ++i) folds[static_cast<size_t>(i % k)].push_back(idx[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

}  // namespace voxmim
