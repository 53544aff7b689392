#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "petfuse/config.hpp"
#include "petfuse/metrics.hpp"
#include "petfuse/preprocess.hpp"

namespace petfuse {

struct FoldReport {
  int index = 0;
  std::string kind;
  std::uint64_t seed = 0;
  int variants = 0;
  int patches_per_variant = 0;
  double duration_ms = 0.0;
};

struct StageTimings {
  double read_ms = 0.0;
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
  double fusion_ms = 0.0;
  double postprocess_ms = 0.0;
  double total_ms = 0.0;
};

struct FusionDiagnostics {
  std::string method;
  std::vector<double> p;
  std::vector<double> q;
  int iters = 0;
  bool converged = true;
  std::string degenerate = "NONE";
};

struct RunReport {
  std::string engine_version;
  std::string case_id;
  int preprocess_count = 0;
  int workers = 1;
  Index3 preprocessed_dims{0, 0, 0};
  int variants_used = 0;
  StageTimings timings;
  std::vector<FoldReport> folds;
  FusionDiagnostics fusion;
  bool has_metrics = false;
  CaseMetrics metrics;
  std::vector<std::string> outputs;
  std::string config_json;  // canonical echo of the effective config
};

struct PreprocessReport {
  std::string case_id;
  BoundingBox bbox;             // body bbox with margin, original grid
  Index3 cropped_dims{0, 0, 0}; // before resampling
  Index3 preprocessed_dims{0, 0, 0};
  double pet_mean = 0.0;
  double pet_std = 1.0;
  std::vector<std::string> outputs;
};

struct BatchCase {
  std::string case_id;
  bool ok = false;
  std::string error;
  bool has_dice = false;
  double dice = 0.0;
  double total_ms = 0.0;
};

struct BatchSummary {
  std::vector<BatchCase> cases;
  int succeeded = 0;
  int failed = 0;
  bool has_mean_dice = false;
  double mean_dice = 0.0;
  double mean_total_ms = 0.0;
};

// Worker-count precedence: CLI flag, then config, then PETFUSE_WORKERS, then 1.
int resolve_workers(const PipelineConfig& config, int cli_workers);

// Full single-case run: load, preprocess once, fan the folds out over
// `workers` threads, fuse, back-resample to the original CT grid, and write
// consensus.nii.gz, consensus_pre.nii.gz, fold_<k>_mask.nii.gz, and
// report.json into output_dir. Throws PARTIAL_FAILURE when any fold fails;
// no consensus is written then.
RunReport run_case(const PipelineConfig& config);

// Preprocessing only; writes pre_ct / pre_pet / pre_gt / body_mask volumes
// plus preprocess.json for inspection.
PreprocessReport run_preprocess(const PipelineConfig& config);

// Manifest lines are `case_id,ct,pet[,gt]`. Cases run isolated (a failing
// case is recorded and the batch continues) under `jobs` threads; each case
// writes into <output_dir>/<case_id>. A summary lands in batch_summary.json.
BatchSummary run_batch(const std::string& manifest_path, const PipelineConfig& base,
                       int jobs);

std::string report_to_json(const RunReport& report, int indent = 2);
std::string batch_summary_to_json(const BatchSummary& summary, int indent = 2);

}  // namespace petfuse
