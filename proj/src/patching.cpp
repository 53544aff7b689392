#include "petfuse/patching.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "petfuse/error.hpp"

namespace petfuse {

Index3 symmetric_pad_lo(const Index3& dims, const Index3& patch_size) {
  Index3 lo{0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    const int padded = std::max(dims[a], patch_size[a]);
    lo[a] = (padded - dims[a]) / 2;
  }
  return lo;
}

PatchGrid plan_patches(const Index3& dims, const Index3& patch_size, double overlap_frac) {
  require(overlap_frac >= 0.0 && overlap_frac < 1.0, Errc::Precondition,
          "overlap_frac must lie in [0, 1)");
  for (int a = 0; a < 3; ++a) {
    require(dims[a] >= 1 && patch_size[a] >= 1, Errc::Precondition,
            "dims and patch_size must be positive");
  }

  PatchGrid grid;
  grid.patch_size = patch_size;

  Index3 counts{1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    grid.padded_dims[a] = std::max(dims[a], patch_size[a]);
    grid.step[a] = std::max(
        1, static_cast<int>(std::floor(patch_size[a] * (1.0 - overlap_frac))));
    const int span = grid.padded_dims[a] - patch_size[a];
    counts[a] = static_cast<int>(
                    std::ceil(static_cast<double>(span) / grid.step[a])) +
                1;
  }

  // Origins are spread evenly over [0, padded - patch]; with a single patch
  // the origin is 0.
  std::array<std::vector<int>, 3> axis_origins;
  for (int a = 0; a < 3; ++a) {
    const int span = grid.padded_dims[a] - patch_size[a];
    axis_origins[a].resize(counts[a]);
    for (int i = 0; i < counts[a]; ++i) {
      axis_origins[a][i] =
          counts[a] == 1
              ? 0
              : static_cast<int>(std::lround(
                    static_cast<double>(i) * span / (counts[a] - 1)));
    }
  }

  grid.placements.reserve(static_cast<std::size_t>(counts[0]) * counts[1] * counts[2]);
  for (int z = 0; z < counts[2]; ++z)
    for (int y = 0; y < counts[1]; ++y)
      for (int x = 0; x < counts[0]; ++x)
        grid.placements.push_back(
            {axis_origins[0][x], axis_origins[1][y], axis_origins[2][z]});
  return grid;
}

WeightKernel make_weight_kernel(const Index3& patch_size, double sigma_scale) {
  require(sigma_scale > 0.0, Errc::Precondition, "sigma_scale must be positive");
  WeightKernel kernel;
  kernel.size = patch_size;

  std::array<std::vector<double>, 3> axis_w;
  for (int a = 0; a < 3; ++a) {
    const int n = patch_size[a];
    require(n >= 1, Errc::Precondition, "patch_size must be positive");
    axis_w[a].resize(n);
    const double center = (n - 1) / 2.0;
    const double sigma = std::max(n * sigma_scale, 1e-8);
    double peak = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = (i - center) / sigma;
      axis_w[a][i] = std::exp(-0.5 * d * d);
      peak = std::max(peak, axis_w[a][i]);
    }
    for (int i = 0; i < n; ++i) axis_w[a][i] /= peak;
  }

  kernel.weights.resize(static_cast<std::size_t>(patch_size[0]) * patch_size[1] *
                        patch_size[2]);
  std::size_t idx = 0;
  for (int z = 0; z < patch_size[2]; ++z)
    for (int y = 0; y < patch_size[1]; ++y)
      for (int x = 0; x < patch_size[0]; ++x)
        kernel.weights[idx++] = static_cast<float>(
            std::max(axis_w[0][x] * axis_w[1][y] * axis_w[2][z], 1e-8));
  return kernel;
}

Volume3 extract_patch(const Volume3& vol, const Index3& origin, const Index3& patch_size,
                      double pad_value) {
  const Index3 pad_lo = symmetric_pad_lo(vol.dims, patch_size);
  for (int a = 0; a < 3; ++a) {
    const int padded = std::max(vol.dims[a], patch_size[a]);
    require(origin[a] >= 0 && origin[a] + patch_size[a] <= padded, Errc::OutOfGrid,
            "patch does not fit the padded grid");
  }

  Volume3 patch = make_volume(patch_size, vol.kind, static_cast<float>(pad_value));
  patch.spacing = vol.spacing;
  patch.direction = vol.direction;
  for (int a = 0; a < 3; ++a) {
    patch.origin[a] = vol.origin[a];
    for (int c = 0; c < 3; ++c) {
      patch.origin[a] += vol.direction[static_cast<std::size_t>(a) * 3 + c] *
                         ((origin[c] - pad_lo[c]) * vol.spacing[c]);
    }
  }

  // Clip the patch window against the unpadded volume and copy x-runs.
  Index3 src_lo{}, src_hi{}, dst_lo{};
  for (int a = 0; a < 3; ++a) {
    src_lo[a] = std::max(origin[a] - pad_lo[a], 0);
    src_hi[a] = std::min(origin[a] - pad_lo[a] + patch_size[a], vol.dims[a]);
    if (src_hi[a] <= src_lo[a]) return patch;  // fully outside, all padding
    dst_lo[a] = src_lo[a] - (origin[a] - pad_lo[a]);
  }
  const std::size_t run = static_cast<std::size_t>(src_hi[0] - src_lo[0]);
  for (int z = src_lo[2]; z < src_hi[2]; ++z) {
    for (int y = src_lo[1]; y < src_hi[1]; ++y) {
      const std::size_t src = vol.index(src_lo[0], y, z);
      const std::size_t dst = patch.index(dst_lo[0], dst_lo[1] + (y - src_lo[1]),
                                          dst_lo[2] + (z - src_lo[2]));
      std::memcpy(patch.data.data() + dst, vol.data.data() + src, run * sizeof(float));
    }
  }
  return patch;
}

Volume3 aggregate(const std::vector<std::pair<Index3, Volume3>>& patch_outputs,
                  const PatchGrid& grid, const WeightKernel& kernel, const Index3& dims) {
  require(kernel.size == grid.patch_size, Errc::Precondition,
          "kernel size must match the patch size");
  require(patch_outputs.size() == grid.placements.size(), Errc::MissingPatch,
          "patch outputs do not cover every placement");

  // Match outputs to planned placements; every placement needs exactly one.
  std::vector<const Volume3*> by_placement(grid.placements.size(), nullptr);
  for (const auto& [origin, patch] : patch_outputs) {
    require(patch.dims == grid.patch_size, Errc::MissingPatch,
            "patch output dims do not match the plan");
    bool matched = false;
    for (std::size_t i = 0; i < grid.placements.size(); ++i) {
      if (grid.placements[i] == origin && by_placement[i] == nullptr) {
        by_placement[i] = &patch;
        matched = true;
        break;
      }
    }
    require(matched, Errc::MissingPatch, "patch origin not in the plan");
  }
  for (const Volume3* p : by_placement)
    require(p != nullptr, Errc::MissingPatch, "placement has no patch output");

  const std::size_t padded_total = static_cast<std::size_t>(grid.padded_dims[0]) *
                                   grid.padded_dims[1] * grid.padded_dims[2];
  std::vector<double> num(padded_total, 0.0);
  std::vector<double> den(padded_total, 0.0);
  std::vector<float> vmin(padded_total, 1.0f);
  std::vector<float> vmax(padded_total, 0.0f);

  const Index3& ps = grid.patch_size;
  for (std::size_t i = 0; i < grid.placements.size(); ++i) {
    const Index3& o = grid.placements[i];
    const Volume3& patch = *by_placement[i];
    std::size_t pi = 0;
    for (int z = 0; z < ps[2]; ++z) {
      for (int y = 0; y < ps[1]; ++y) {
        std::size_t gi = static_cast<std::size_t>(o[0]) +
                         static_cast<std::size_t>(grid.padded_dims[0]) *
                             ((o[1] + y) +
                              static_cast<std::size_t>(grid.padded_dims[1]) * (o[2] + z));
        for (int x = 0; x < ps[0]; ++x, ++pi, ++gi) {
          const double w = kernel.weights[pi];
          const float v = patch.data[pi];
          num[gi] += w * v;
          den[gi] += w;
          vmin[gi] = std::min(vmin[gi], v);
          vmax[gi] = std::max(vmax[gi], v);
        }
      }
    }
  }

  const Index3 pad_lo = symmetric_pad_lo(dims, grid.patch_size);
  const Volume3& first = *by_placement[0];
  Volume3 out = make_volume(dims, VoxelKind::Probability);
  out.spacing = first.spacing;
  out.direction = first.direction;
  // Undo the symmetric padding shift carried by the first placement's origin.
  for (int a = 0; a < 3; ++a) {
    out.origin[a] = first.origin[a];
    for (int c = 0; c < 3; ++c) {
      out.origin[a] += first.direction[static_cast<std::size_t>(a) * 3 + c] *
                       ((pad_lo[c] - grid.placements[0][c]) * first.spacing[c]);
    }
  }
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x) {
        const std::size_t gi = static_cast<std::size_t>(x + pad_lo[0]) +
                               static_cast<std::size_t>(grid.padded_dims[0]) *
                                   ((y + pad_lo[1]) +
                                    static_cast<std::size_t>(grid.padded_dims[1]) *
                                        (z + pad_lo[2]));
        require(den[gi] > 0.0, Errc::MissingPatch, "voxel not covered by any patch");
        float v = static_cast<float>(num[gi] / den[gi]);
        v = std::min(std::max(v, vmin[gi]), vmax[gi]);
        out.data[out.index(x, y, z)] = v;
      }
    }
  }
  return out;
}

}  // namespace petfuse
