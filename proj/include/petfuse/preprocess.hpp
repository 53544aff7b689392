#pragma once

#include <cstdint>

#include "petfuse/volume.hpp"

namespace petfuse {

struct BodyMaskParams {
  double hu_threshold = -500.0;
  double closing_radius_mm = 3.0;
  int connectivity = 26;  // 6 or 26
};

struct CropSpec {
  BoundingBox bbox;
  double margin_mm = 10.0;
  double pad_value_ct = -1024.0;
  double pad_value_pet = 0.0;
};

struct NormalizationStats {
  double clip_lo = -1024.0;
  double clip_hi = 1024.0;
  double mean = 0.0;
  double std = 1024.0;
};

enum class Interp { Trilinear, Nearest };

// What to do with samples that fall outside the source grid's support.
enum class OutOfSupport { Clamp, Constant };

// Target grid for cross-grid resampling.
struct GridRef {
  Index3 dims{1, 1, 1};
  Real3 spacing{1.0, 1.0, 1.0};
  Real3 origin{0.0, 0.0, 0.0};
  Mat3 direction = kIdentityDirection;
};

GridRef grid_of(const Volume3& vol);

// Deterministic body localization: threshold above hu_threshold, keep the
// largest connected component, then close with an ellipsoid whose mm radius is
// rounded to voxels per axis. Throws EMPTY_MASK when nothing clears the
// threshold.
Volume3 extract_body_mask(const Volume3& ct, const BodyMaskParams& params);

// Tightest box around the foreground, dilated by ceil(margin_mm / spacing) per
// axis and clamped to the grid.
BoundingBox compute_bbox(const Volume3& mask, double margin_mm);

// Extracts spec.bbox (which may extend beyond the volume); voxels outside the
// source are filled with the modality's pad value. World coordinates of copied
// voxels are preserved.
Volume3 crop_with_padding(const Volume3& vol, const CropSpec& spec);

// Resamples onto max(1, round(dims * spacing / target)) voxels per axis; the
// output grid is centered on the input's world extent. LABEL volumes must use
// Nearest. Identity spacing returns the input bit-exactly.
Volume3 resample(const Volume3& vol, const Real3& target_spacing, Interp mode);

// General grid-to-grid resampling (used to align PET with CT and to map the
// consensus back to the original grid).
Volume3 resample_like(const Volume3& vol, const GridRef& target, Interp mode,
                      OutOfSupport policy = OutOfSupport::Clamp, double fill = 0.0);

// v' = (clamp(v, clip_lo, clip_hi) - mean) / std
Volume3 normalize_ct(const Volume3& vol, const NormalizationStats& stats);

// Per-image z-score with an epsilon guard on the standard deviation. The
// computed moments are reported through the optional out-parameters.
Volume3 normalize_pet(const Volume3& vol, double* mean_out = nullptr,
                      double* std_out = nullptr);

}  // namespace petfuse
