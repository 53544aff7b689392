#pragma once

#include <cstdint>
#include <string>

#include "petfuse/volume.hpp"

namespace petfuse {

enum class PredictorKind { Threshold, Oracle, External };

const char* predictor_kind_name(PredictorKind kind);

// One per-fold predictor. THRESHOLD and ORACLE are deterministic built-ins;
// EXTERNAL shells out per patch through the file protocol below.
struct PredictorBinding {
  PredictorKind kind = PredictorKind::Oracle;
  double threshold_t = 2.5;      // THRESHOLD, normalized PET units
  double smooth_sigma_mm = 2.0;  // THRESHOLD and ORACLE
  double noise_amp = 0.0;        // ORACLE, must stay in [0, 0.5)
  std::uint64_t seed = 0;        // ORACLE
  std::string command;           // EXTERNAL: invoked as `command <uuid> <workdir>`
  std::string workdir;           // EXTERNAL: exchange directory, default "."
};

// Per-call inputs that are not part of the binding: the ground-truth patch
// for ORACLE and the noise stream key derived from (case, fold seed,
// placement index).
struct PatchContext {
  const Volume3* gt_patch = nullptr;
  std::uint64_t noise_key = 0;
};

// Separable Gaussian smoothing with sigma given in millimeters. Boundary
// handling clamps to the edge; per-axis accumulation pairs the two samples
// equidistant from the center so mirroring an axis mirrors the result
// bit-exactly.
Volume3 gaussian_smooth(const Volume3& vol, double sigma_mm);

// Foreground probability for one patch, in [0,1] on the PET patch grid.
//
// THRESHOLD: sigmoid((pet - threshold_t) / 0.5), then Gaussian smoothing.
// ORACLE: ground truth smoothed by smooth_sigma_mm plus seeded uniform noise
//   in [-noise_amp, +noise_amp], clamped to [0,1]. At sigma 0 and
//   noise_amp < 0.5 the 0.5-threshold binarization returns gt exactly.
// EXTERNAL: writes <workdir>/<uuid>_ct.nii.gz and <uuid>_pet.nii.gz, runs
//   `command <uuid> <workdir>`, and reads back <uuid>_prob.nii.gz. Nonzero
//   exit, a missing or malformed reply, or wrong dims raise EXTERNAL_FAILURE.
Volume3 predict(const PredictorBinding& binding, const Volume3& ct_patch,
                const Volume3& pet_patch, const PatchContext& ctx);

}  // namespace petfuse
