#include "petfuse/tta.hpp"

#include <algorithm>

#include "petfuse/error.hpp"

namespace petfuse {

std::vector<MirrorVariant> all_mirror_variants() {
  std::vector<MirrorVariant> variants;
  variants.reserve(8);
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int z = 0; z < 2; ++z) variants.push_back({x != 0, y != 0, z != 0});
  return variants;
}

std::vector<MirrorVariant> select_variants(const Index3& dims, const TtaPolicy& policy) {
  const std::uint64_t voxels = static_cast<std::uint64_t>(dims[0]) *
                               static_cast<std::uint64_t>(dims[1]) *
                               static_cast<std::uint64_t>(dims[2]);
  if (voxels <= policy.voxel_budget) return all_mirror_variants();
  return {MirrorVariant{}, MirrorVariant{true, false, false}};
}

Volume3 apply_mirror(const Volume3& vol, const MirrorVariant& variant) {
  Volume3 out = vol;
  const Index3& d = vol.dims;
  for (int z = 0; z < d[2]; ++z) {
    const int sz = variant.flip_z ? d[2] - 1 - z : z;
    for (int y = 0; y < d[1]; ++y) {
      const int sy = variant.flip_y ? d[1] - 1 - y : y;
      if (!variant.flip_x) {
        std::copy_n(vol.data.data() + vol.index(0, sy, sz), d[0],
                    out.data.data() + out.index(0, y, z));
      } else {
        std::reverse_copy(vol.data.data() + vol.index(0, sy, sz),
                          vol.data.data() + vol.index(0, sy, sz) + d[0],
                          out.data.data() + out.index(0, y, z));
      }
    }
  }
  return out;
}

Volume3 aggregate_tta(
    const std::vector<std::pair<MirrorVariant, Volume3>>& variant_outputs) {
  require(!variant_outputs.empty(), Errc::EmptyList, "no variant outputs to aggregate");
  const Index3 dims = variant_outputs.front().second.dims;
  for (const auto& [variant, vol] : variant_outputs) {
    require(vol.dims == dims, Errc::DimsMismatch,
            "variant outputs must share dimensions");
  }

  Volume3 out = variant_outputs.front().second;
  out.kind = VoxelKind::Probability;
  const std::size_t total = out.size();
  std::vector<double> acc(total, 0.0);
  std::vector<float> vmin(total, 1.0f);
  std::vector<float> vmax(total, 0.0f);

  for (const auto& [variant, vol] : variant_outputs) {
    // Mirroring is an involution, so re-applying maps the prediction back to
    // the unmirrored frame.
    const Volume3 restored = apply_mirror(vol, variant);
    for (std::size_t i = 0; i < total; ++i) {
      const float v = restored.data[i];
      acc[i] += v;
      vmin[i] = std::min(vmin[i], v);
      vmax[i] = std::max(vmax[i], v);
    }
  }

  const double inv = 1.0 / static_cast<double>(variant_outputs.size());
  for (std::size_t i = 0; i < total; ++i) {
    float v = static_cast<float>(acc[i] * inv);
    out.data[i] = std::min(std::max(v, vmin[i]), vmax[i]);
  }
  return out;
}

}  // namespace petfuse
