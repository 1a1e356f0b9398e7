#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "voxmim/rng.hpp"

namespace voxmim {

// Non-overlapping cubic patches over a volume. Raster order is z-major:
// voxel (x, y, z) sits at index (x*Y + y)*Z + z and patch (ix, iy, iz) at
// (ix*gy + iy)*gz + iz, so z varies fastest in both.
struct PatchGrid {
  int patch = 0;
  int gx = 0, gy = 0, gz = 0;

  PatchGrid() = default;
  PatchGrid(std::array<int, 3> vol_dims, int patch_size);

  int count() const { return gx * gy * gz; }
  int patch_len() const { return patch * patch * patch; }
  std::array<int, 3> vol_dims() const { return {gx * patch, gy * patch, gz * patch}; }
  int64_t voxels() const { return int64_t(gx) * gy * gz * patch_len(); }
};

// (count, patch_len) row-major patch matrix <-> volume
std::vector<float> patchify(const std::vector<float>& volume, const PatchGrid& grid);
std::vector<float> unpatchify(const std::vector<float>& patches, const PatchGrid& grid);

struct MaskPlan {
  std::vector<int> visible;  // ascending
  std::vector<int> masked;   // ascending
  double ratio = 0.0;
};

// uniformly random subset of round(ratio*n) masked indices
MaskPlan sample_mask(int n, double ratio, Rng& rng);

// gather the rows listed in idx from a (rows, len) patch matrix
std::vector<float> gather_patches(const std::vector<float>& patches, int len,
                                  const std::vector<int>& idx);

// place branch outputs back into a full patch matrix and rebuild the volume:
// masked rows come from masked_preds, visible rows from visible_preds
std::vector<float> assemble_restoration(const std::vector<float>& masked_preds,
                                        const std::vector<float>& visible_preds,
                                        const MaskPlan& plan, const PatchGrid& grid);

// Monotone intensity remap through a cubic Bezier with endpoints (0,0), (1,1)
// and control points inside the unit square; inverted through a dense lookup.
struct BezierCurve {
  double p1x = 1.0 / 3.0, p1y = 1.0 / 3.0;
  double p2x = 2.0 / 3.0, p2y = 2.0 / 3.0;
  bool decreasing = false;

  static constexpr int kLutSize = 1024;

  static BezierCurve identity() { return BezierCurve{}; }
  // control points uniform in the unit square, decreasing with probability 1/2
  static BezierCurve random(Rng& rng);

  void build_lut() const;
  float apply(float v) const;

 private:
  mutable std::vector<double> lut_x_, lut_y_;  // built lazily, monotone in t
};

// With probability apply_prob, remap every voxel of the patch matrix through
// a fresh random curve; otherwise return the input unchanged. Values must lie
// in [0, 1].
std::vector<float> bezier_transform(const std::vector<float>& patches, double apply_prob,
                                    Rng& rng);
std::vector<float> bezier_apply(const std::vector<float>& patches, const BezierCurve& curve);

}  // namespace voxmim
