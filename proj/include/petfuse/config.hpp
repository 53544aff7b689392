#pragma once

#include <string>
#include <vector>

#include "petfuse/fusion.hpp"
#include "petfuse/predictor.hpp"
#include "petfuse/preprocess.hpp"
#include "petfuse/tta.hpp"
#include "petfuse/volume.hpp"

namespace petfuse {

enum class FusionMethod { Staple, Majority, Mean };

const char* fusion_method_name(FusionMethod method);

struct CropParams {
  double margin_mm = 10.0;
  double pad_value_ct = -1024.0;
  double pad_value_pet = 0.0;
};

struct PatchParams {
  Index3 size{224, 192, 224};
  double overlap_frac = 0.5;
  double sigma_scale = 0.125;
};

// Declarative run configuration, loaded from a JSON file with a versioned
// schema ("schema": 1). Unknown keys are rejected.
struct PipelineConfig {
  std::string case_id;  // empty: derived from the input_ct stem
  std::string input_ct;
  std::string input_pet;
  std::string gt;  // empty: no ground truth
  std::string output_dir = ".";
  Real3 target_spacing{2.0, 2.0, 2.0};
  BodyMaskParams body_mask;
  CropParams crop;
  NormalizationStats normalization;
  PatchParams patch;
  TtaPolicy tta;
  std::vector<PredictorBinding> folds;  // default: 5 ORACLE folds, seeds 1..5
  double binarize_threshold = 0.5;
  FusionMethod fusion_method = FusionMethod::Staple;
  StapleParams staple;
  int workers = 0;  // 0: unset, resolved as CLI flag > config > PETFUSE_WORKERS > 1
};

// The five-fold ORACLE default configuration.
PipelineConfig default_config();

// Parse and validate. Violations raise CONFIG_ERROR.
PipelineConfig parse_config_text(const std::string& text);
PipelineConfig load_config(const std::string& path);

// Canonical JSON echo of an effective configuration (defaults filled in).
std::string config_to_json(const PipelineConfig& config, int indent = 2);

}  // namespace petfuse
