#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "petfuse/error.hpp"

namespace petfuse {

using Index3 = std::array<int, 3>;
using Real3 = std::array<double, 3>;

// Row-major 3x3. Column c is the world-space direction of voxel axis c.
using Mat3 = std::array<double, 9>;

inline constexpr Mat3 kIdentityDirection{1, 0, 0, 0, 1, 0, 0, 0, 1};

enum class VoxelKind { CT, PET, Probability, Label };

const char* to_string(VoxelKind kind);

// A 3D scalar grid with physical-space metadata. Values are always 32-bit
// reals in memory; data is stored x-fastest:
//   index = x + dims[0] * (y + dims[1] * z)
// Volumes are treated as immutable values once built.
struct Volume3 {
  Index3 dims{1, 1, 1};
  Real3 spacing{1.0, 1.0, 1.0};
  Real3 origin{0.0, 0.0, 0.0};
  Mat3 direction = kIdentityDirection;
  VoxelKind kind = VoxelKind::CT;
  std::vector<float> data;

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
  }

  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }

  bool in_bounds(const Index3& idx) const {
    return idx[0] >= 0 && idx[0] < dims[0] && idx[1] >= 0 && idx[1] < dims[1] && idx[2] >= 0 &&
           idx[2] < dims[2];
  }
};

Volume3 make_volume(const Index3& dims, VoxelKind kind, float fill = 0.0f);

// Throws Errc::Precondition with a reason when any Volume3 invariant is
// violated (shape, spacing, direction orthonormality, kind value ranges).
void validate(const Volume3& vol);

// Metadata comparison within `tol`; dims compared exactly.
bool same_grid(const Volume3& a, const Volume3& b, double tol = 1e-6);

// Exact comparison of metadata and bitwise comparison of the payload.
bool bitwise_equal(const Volume3& a, const Volume3& b);

// origin + direction * (idx .* spacing). Throws OUT_OF_RANGE for out-of-grid
// indices.
Real3 voxel_to_world(const Volume3& vol, const Index3& idx);

// Continuous voxel coordinates of a world point (inverse of voxel_to_world).
Real3 world_to_voxel(const Volume3& vol, const Real3& world);

// Half-open voxel box: lo inclusive, hi exclusive.
struct BoundingBox {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};

  int extent(int axis) const { return hi[axis] - lo[axis]; }
  bool contains(const Index3& idx) const {
    return idx[0] >= lo[0] && idx[0] < hi[0] && idx[1] >= lo[1] && idx[1] < hi[1] &&
           idx[2] >= lo[2] && idx[2] < hi[2];
  }
};

}  // namespace petfuse
