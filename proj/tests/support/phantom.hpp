#pragma once

// Synthetic PET/CT case with exactly known geometry: a body ellipsoid of
// 0 HU in -1000 HU air, uniform PET background 0.5, and two hot spheres at
// intensity 8 that form the ground truth. Spacing matches the default
// (2,2,2) mm target so the preprocessed grid stays voxel-aligned with the
// original.

#include <cmath>

#include "petfuse/volume.hpp"

namespace testutil {

struct PhantomCase {
  petfuse::Volume3 ct;
  petfuse::Volume3 pet;
  petfuse::Volume3 gt;
};

inline PhantomCase make_phantom(int n = 96) {
  using petfuse::Index3;
  using petfuse::Volume3;
  using petfuse::VoxelKind;

  const Index3 dims{n, n, n};
  PhantomCase ph;
  ph.ct = petfuse::make_volume(dims, VoxelKind::CT, -1000.0f);
  ph.pet = petfuse::make_volume(dims, VoxelKind::PET, 0.5f);
  ph.gt = petfuse::make_volume(dims, VoxelKind::Label, 0.0f);
  for (Volume3* v : {&ph.ct, &ph.pet, &ph.gt}) {
    v->spacing = {2.0, 2.0, 2.0};
    v->origin = {-static_cast<double>(n), -static_cast<double>(n),
                 -static_cast<double>(n)};
  }

  // Geometry scales with n; at the reference n = 96 the ellipsoid semi-axes
  // are (30, 35, 40) voxels and the lesions have radii 10 and 8.
  const double s = n / 96.0;
  const double c = (n - 1) / 2.0;
  const double ax = 30.0 * s, ay = 35.0 * s, az = 40.0 * s;
  struct Sphere {
    double x, y, z, r;
  };
  const Sphere lesions[2] = {{c - 10.0 * s, c, c, 10.0 * s},
                             {c + 12.0 * s, c + 6.0 * s, c - 4.0 * s, 8.0 * s}};

  for (int z = 0; z < n; ++z) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double ex = (x - c) / ax, ey = (y - c) / ay, ez = (z - c) / az;
        const std::size_t i = ph.ct.index(x, y, z);
        if (ex * ex + ey * ey + ez * ez <= 1.0) ph.ct.data[i] = 0.0f;
        for (const Sphere& s : lesions) {
          const double dx = x - s.x, dy = y - s.y, dz = z - s.z;
          if (dx * dx + dy * dy + dz * dz <= s.r * s.r) {
            ph.pet.data[i] = 8.0f;
            ph.gt.data[i] = 1.0f;
          }
        }
      }
    }
  }
  return ph;
}

}  // namespace testutil
