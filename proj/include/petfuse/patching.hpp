#pragma once

#include <utility>
#include <vector>

#include "petfuse/volume.hpp"

namespace petfuse {

// Overlapping patch placements covering a (possibly padded) volume. Origins
// live in padded coordinates; volumes smaller than the patch are symmetrically
// padded, and aggregation crops the padding away again.
struct PatchGrid {
  Index3 patch_size{224, 192, 224};
  Index3 step{1, 1, 1};
  Index3 padded_dims{1, 1, 1};
  std::vector<Index3> placements;  // x-fastest order
};

// Separable Gaussian aggregation weights over one patch, normalized to a
// maximum of 1 at the center and floored at 1e-8.
struct WeightKernel {
  Index3 size{1, 1, 1};
  std::vector<float> weights;
};

// Low index of the symmetric padding applied when dims < patch_size.
Index3 symmetric_pad_lo(const Index3& dims, const Index3& patch_size);

PatchGrid plan_patches(const Index3& dims, const Index3& patch_size, double overlap_frac);

WeightKernel make_weight_kernel(const Index3& patch_size, double sigma_scale);

// Copies the patch at `origin` (padded coordinates); voxels outside the
// volume are filled with pad_value. Throws OUT_OF_GRID when the patch does not
// fit the padded grid.
Volume3 extract_patch(const Volume3& vol, const Index3& origin, const Index3& patch_size,
                      double pad_value);

// Gaussian-weighted average of per-patch probabilities, accumulated in
// placement-index order and cropped back to `dims`. Output spacing/direction
// are taken from the first patch; callers that know the destination grid
// should overwrite origin metadata.
Volume3 aggregate(const std::vector<std::pair<Index3, Volume3>>& patch_outputs,
                  const PatchGrid& grid, const WeightKernel& kernel, const Index3& dims);

}  // namespace petfuse
