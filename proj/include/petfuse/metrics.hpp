#pragma once

#include <cstdint>

#include "petfuse/volume.hpp"

namespace petfuse {

struct CaseMetrics {
  double dice = 0.0;
  double fp_volume_ml = 0.0;
  double fn_volume_ml = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
};

// 2|P ∩ G| / (|P| + |G|); both masks empty scores 1.0. Throws GRID_MISMATCH.
double dice(const Volume3& pred, const Volume3& gt);

// Confusion counts plus volumes in milliliters (count times the voxel volume
// in mm^3 over 1000). Throws GRID_MISMATCH.
CaseMetrics evaluate_masks(const Volume3& pred, const Volume3& gt);

}  // namespace petfuse
