#pragma once

#include <cstdint>
#include <vector>

#include "petfuse/volume.hpp"

namespace petfuse {

struct MirrorVariant {
  bool flip_x = false;
  bool flip_y = false;
  bool flip_z = false;

  bool operator==(const MirrorVariant&) const = default;
};

// Test-time mirror augmentation budget. Volumes whose voxel count stays
// within the budget get all 8 mirror variants; larger volumes fall back to
// the identity plus one x-flip.
struct TtaPolicy {
  std::uint64_t voxel_budget = 250000000;
};

// Full set, lexicographic in (flip_x, flip_y, flip_z) with identity first.
std::vector<MirrorVariant> all_mirror_variants();

std::vector<MirrorVariant> select_variants(const Index3& dims, const TtaPolicy& policy);

// Reverses the data along the flipped axes; metadata is untouched, so the
// result is an augmentation view rather than a world-consistent volume.
Volume3 apply_mirror(const Volume3& vol, const MirrorVariant& variant);

// Mean over variant predictions after mapping each back through its own
// mirror. Entries pair the variant with the prediction made on the mirrored
// input. Throws EMPTY_LIST / DIMS_MISMATCH.
Volume3 aggregate_tta(
    const std::vector<std::pair<MirrorVariant, Volume3>>& variant_outputs);

}  // namespace petfuse
