#include "voxmim/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace voxmim {

PatchGrid::PatchGrid(std::array<int, 3> vol_dims, int patch_size) : patch(patch_size) {
  if (patch_size <= 0) throw std::invalid_argument("patch size must be positive");
  for (int d : vol_dims)
    if (d <= 0 || d % patch_size != 0)
      throw std::invalid_argument("volume dim " + std::to_string(d) +
                                  " not divisible by patch size " + std::to_string(patch_size));
  gx = vol_dims[0] / patch_size;
  gy = vol_dims[1] / patch_size;
  gz = vol_dims[2] / patch_size;
}

std::vector<float> patchify(const std::vector<float>& volume, const PatchGrid& grid) {
  if (static_cast<int64_t>(volume.size()) != grid.voxels())
    throw std::invalid_argument("patchify: volume size " + std::to_string(volume.size()) +
                                " does not match grid " + std::to_string(grid.voxels()));
  const int p = grid.patch;
  const int Y = grid.gy * p, Z = grid.gz * p;
  std::vector<float> out(static_cast<size_t>(grid.count()) * grid.patch_len());
  size_t w = 0;
  for (int ix = 0; ix < grid.gx; ++ix)
    for (int iy = 0; iy < grid.gy; ++iy)
      for (int iz = 0; iz < grid.gz; ++iz)
        for (int lx = 0; lx < p; ++lx)
          for (int ly = 0; ly < p; ++ly) {
            const size_t base =
                (static_cast<size_t>(ix * p + lx) * Y + (iy * p + ly)) * Z + iz * p;
            std::copy(volume.begin() + base, volume.begin() + base + p, out.begin() + w);
            w += p;
          }
  return out;
}

std::vector<float> unpatchify(const std::vector<float>& patches, const PatchGrid& grid) {
  if (static_cast<int64_t>(patches.size()) != grid.voxels())
    throw std::invalid_argument("unpatchify: patch matrix size " +
                                std::to_string(patches.size()) + " does not match grid " +
                                std::to_string(grid.voxels()));
  const int p = grid.patch;
  const int Y = grid.gy * p, Z = grid.gz * p;
  std::vector<float> out(patches.size());
  size_t r = 0;
  for (int ix = 0; ix < grid.gx; ++ix)
    for (int iy = 0; iy < grid.gy; ++iy)
      for (int iz = 0; iz < grid.gz; ++iz)
        for (int lx = 0; lx < p; ++lx)
          for (int ly = 0; ly < p; ++ly) {
            const size_t base =
                (static_cast<size_t>(ix * p + lx) * Y + (iy * p + ly)) * Z + iz * p;
            std::copy(patches.begin() + r, patches.begin() + r + p, out.begin() + base);
            r += p;
          }
  return out;
}

MaskPlan sample_mask(int n, double ratio, Rng& rng) {
  if (n <= 0 || ratio <= 0.0 || ratio >= 1.0)
    throw std::invalid_argument("sample_mask: need n > 0 and 0 < ratio < 1");
  const int m = static_cast<int>(std::lround(ratio * n));
  if (m <= 0 || m >= n)
    throw std::invalid_argument("sample_mask: degenerate plan, round(" + std::to_string(ratio) +
                                " * " + std::to_string(n) + ") = " + std::to_string(m));
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx.begin(), idx.end());
  MaskPlan plan;
  plan.ratio = ratio;
  plan.masked.assign(idx.begin(), idx.begin() + m);
  plan.visible.assign(idx.begin() + m, idx.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

std::vector<float> gather_patches(const std::vector<float>& patches, int len,
                                  const std::vector<int>& idx) {
  std::vector<float> out(idx.size() * static_cast<size_t>(len));
  const int rows = static_cast<int>(patches.size() / len);
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= rows)
      throw std::invalid_argument("gather_patches: index out of range");
    std::copy(patches.begin() + static_cast<size_t>(idx[r]) * len,
              patches.begin() + static_cast<size_t>(idx[r] + 1) * len,
              out.begin() + r * static_cast<size_t>(len));
  }
  return out;
}

std::vector<float> assemble_restoration(const std::vector<float>& masked_preds,
                                        const std::vector<float>& visible_preds,
                                        const MaskPlan& plan, const PatchGrid& grid) {
  const size_t len = static_cast<size_t>(grid.patch_len());
  if (masked_preds.size() != plan.masked.size() * len)
    throw std::invalid_argument("assemble_restoration: masked prediction count " +
                                std::to_string(masked_preds.size() / len) + " != " +
                                std::to_string(plan.masked.size()));
  if (visible_preds.size() != plan.visible.size() * len)
    throw std::invalid_argument("assemble_restoration: visible prediction count " +
                                std::to_string(visible_preds.size() / len) + " != " +
                                std::to_string(plan.visible.size()));
  std::vector<float> patches(static_cast<size_t>(grid.count()) * len, 0.0f);
  for (size_t r = 0; r < plan.masked.size(); ++r)
    std::copy(masked_preds.begin() + r * len, masked_preds.begin() + (r + 1) * len,
              patches.begin() + static_cast<size_t>(plan.masked[r]) * len);
  for (size_t r = 0; r < plan.visible.size(); ++r)
    std::copy(visible_preds.begin() + r * len, visible_preds.begin() + (r + 1) * len,
              patches.begin() + static_cast<size_t>(plan.visible[r]) * len);
  return unpatchify(patches, grid);
}

namespace {
inline double bezier1d(double t, double c1, double c2) {
  const double u = 1.0 - t;
  return 3.0 * u * u * t * c1 + 3.0 * u * t * t * c2 + t * t * t;
}
}  // namespace

BezierCurve BezierCurve::random(Rng& rng) {
  BezierCurve c;
  c.p1x = rng.uniform();
  c.p1y = rng.uniform();
  c.p2x = rng.uniform();
  c.p2y = rng.uniform();
  c.decreasing = rng.uniform() < 0.5;
  return c;
}

void BezierCurve::build_lut() const {
  if (!lut_x_.empty()) return;
  lut_x_.resize(kLutSize);
  lut_y_.resize(kLutSize);
  for (int i = 0; i < kLutSize; ++i) {
    const double t = static_cast<double>(i) / (kLutSize - 1);
    lut_x_[i] = bezier1d(t, p1x, p2x);
    lut_y_[i] = bezier1d(t, p1y, p2y);
  }
  // both coordinates are nondecreasing for control points in the unit square;
  // the running max only flattens float-level wobble
  for (int i = 1; i < kLutSize; ++i) {
    lut_x_[i] = std::max(lut_x_[i], lut_x_[i - 1]);
    lut_y_[i] = std::max(lut_y_[i], lut_y_[i - 1]);
  }
}

float BezierCurve::apply(float v) const {
  build_lut();
  const double x = v;
  auto it = std::lower_bound(lut_x_.begin(), lut_x_.end(), x);
  double y;
  if (it == lut_x_.begin())
    y = lut_y_.front();
  else if (it == lut_x_.end())
    y = lut_y_.back();
  else {
    const size_t hi = static_cast<size_t>(it - lut_x_.begin());
    const double x0 = lut_x_[hi - 1], x1 = lut_x_[hi];
    const double y0 = lut_y_[hi - 1], y1 = lut_y_[hi];
    y = x1 > x0 ? y0 + (y1 - y0) * (x - x0) / (x1 - x0) : y0;
  }
  return static_cast<float>(decreasing ? 1.0 - y : y);
}

std::vector<float> bezier_apply(const std::vector<float>& patches, const BezierCurve& curve) {
  std::vector<float> out(patches.size());
  for (size_t i = 0; i < patches.size(); ++i) {
    if (!(patches[i] >= 0.0f && patches[i] <= 1.0f))
      throw std::invalid_argument("bezier: voxel value " + std::to_string(patches[i]) +
                                  " outside [0,1]");
    out[i] = curve.apply(patches[i]);
  }
  return out;
}

std::vector<float> bezier_transform(const std::vector<float>& patches, double apply_prob,
                                    Rng& rng) {
  // per-volume application decision; the curve itself is drawn per application
  const bool apply = rng.uniform() < apply_prob;
  const BezierCurve curve = BezierCurve::random(rng);
  if (!apply) {
    for (float v : patches)
      if (!(v >= 0.0f && v <= 1.0f))
        throw std::invalid_argument("bezier: voxel value outside [0,1]");
    return patches;
  }
  return bezier_apply(patches, curve);
}

}  // namespace voxmim
