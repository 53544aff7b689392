#include "petfuse/volume.hpp"

#include <cmath>
#include <cstring>

namespace petfuse {

const char* to_string(VoxelKind kind) {
  switch (kind) {
    case VoxelKind::CT: return "CT";
    case VoxelKind::PET: return "PET";
    case VoxelKind::Probability: return "PROBABILITY";
    case VoxelKind::Label: return "LABEL";
  }
  return "?";
}

Volume3 make_volume(const Index3& dims, VoxelKind kind, float fill) {
  Volume3 vol;
  vol.dims = dims;
  vol.kind = kind;
  vol.data.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], fill);
  return vol;
}

void validate(const Volume3& vol) {
  for (int a = 0; a < 3; ++a) {
    require(vol.dims[a] >= 1, Errc::Precondition, "dims must be >= 1 on every axis");
    require(vol.spacing[a] > 0.0, Errc::Precondition, "spacing must be > 0 on every axis");
  }
  require(vol.data.size() == vol.size(), Errc::Precondition,
          "data length must equal the product of dims");

  const Mat3& d = vol.direction;
  for (int c = 0; c < 3; ++c) {
    const double norm =
        std::sqrt(d[c] * d[c] + d[3 + c] * d[3 + c] + d[6 + c] * d[6 + c]);
    require(std::abs(norm - 1.0) <= 1e-6, Errc::Precondition,
            "direction columns must be unit length");
  }
  for (int c0 = 0; c0 < 3; ++c0) {
    for (int c1 = c0 + 1; c1 < 3; ++c1) {
      const double dot =
          d[c0] * d[c1] + d[3 + c0] * d[3 + c1] + d[6 + c0] * d[6 + c1];
      require(std::abs(dot) <= 1e-6, Errc::Precondition,
              "direction columns must be mutually orthogonal");
    }
  }

  if (vol.kind == VoxelKind::Probability) {
    for (float v : vol.data) {
      require(v >= 0.0f && v <= 1.0f, Errc::Precondition,
              "PROBABILITY values must lie in [0, 1]");
    }
  } else if (vol.kind == VoxelKind::Label) {
    for (float v : vol.data) {
      require(v == 0.0f || v == 1.0f, Errc::Precondition,
              "LABEL values must be 0 or 1");
    }
  }
}

bool same_grid(const Volume3& a, const Volume3& b, double tol) {
  if (a.dims != b.dims) return false;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(a.spacing[i] - b.spacing[i]) > tol) return false;
    if (std::abs(a.origin[i] - b.origin[i]) > tol) return false;
  }
  for (int i = 0; i < 9; ++i) {
    if (std::abs(a.direction[i] - b.direction[i]) > tol) return false;
  }
  return true;
}

bool bitwise_equal(const Volume3& a, const Volume3& b) {
  if (a.dims != b.dims || a.spacing != b.spacing || a.origin != b.origin ||
      a.direction != b.direction || a.kind != b.kind) {
    return false;
  }
  if (a.data.size() != b.data.size()) return false;
  return a.data.empty() ||
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

Real3 voxel_to_world(const Volume3& vol, const Index3& idx) {
  require(vol.in_bounds(idx), Errc::OutOfRange, "voxel index outside the grid");
  Real3 world;
  const Real3 scaled{idx[0] * vol.spacing[0], idx[1] * vol.spacing[1], idx[2] * vol.spacing[2]};
  for (int r = 0; r < 3; ++r) {
    world[r] = vol.origin[r] + vol.direction[r * 3 + 0] * scaled[0] +
               vol.direction[r * 3 + 1] * scaled[1] + vol.direction[r * 3 + 2] * scaled[2];
  }
  return world;
}

Real3 world_to_voxel(const Volume3& vol, const Real3& world) {
  const Real3 delta{world[0] - vol.origin[0], world[1] - vol.origin[1],
                    world[2] - vol.origin[2]};
  Real3 voxel;
  // direction is orthonormal, so its inverse is its transpose.
  for (int c = 0; c < 3; ++c) {
    const double along = vol.direction[c] * delta[0] + vol.direction[3 + c] * delta[1] +
                         vol.direction[6 + c] * delta[2];
    voxel[c] = along / vol.spacing[c];
  }
  return voxel;
}

}  // namespace petfuse
