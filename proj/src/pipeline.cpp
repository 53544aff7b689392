#include "petfuse/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "petfuse/error.hpp"
#include "petfuse/nifti.hpp"
#include "petfuse/patching.hpp"
#include "petfuse/rng.hpp"
#include "petfuse/version.hpp"

namespace petfuse {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string derive_case_id(const std::string& ct_path) {
  std::string name = fs::path(ct_path).filename().string();
  for (const char* ext : {".gz", ".nii"}) {
    const std::size_t len = std::string(ext).size();
    if (name.size() > len && name.compare(name.size() - len, len, ext) == 0)
      name.resize(name.size() - len);
  }
  return name.empty() ? "case" : name;
}

struct LoadedCase {
  Volume3 ct;
  Volume3 pet;
  std::optional<Volume3> gt;
};

LoadedCase load_case(const PipelineConfig& cfg) {
  require(!cfg.input_ct.empty(), Errc::ConfigError, "\"input_ct\" is required");
  require(!cfg.input_pet.empty(), Errc::ConfigError, "\"input_pet\" is required");
  for (const std::string& path : {cfg.input_ct, cfg.input_pet}) {
    require(fs::exists(path), Errc::ConfigError, "input file not found: " + path);
  }
  if (!cfg.gt.empty()) {
    require(fs::exists(cfg.gt), Errc::ConfigError, "gt file not found: " + cfg.gt);
  }

  LoadedCase loaded;
  loaded.ct = read_nifti(cfg.input_ct, VoxelKind::CT);
  loaded.pet = read_nifti(cfg.input_pet, VoxelKind::PET);
  if (!same_grid(loaded.pet, loaded.ct)) {
    loaded.pet = resample_like(loaded.pet, grid_of(loaded.ct), Interp::Trilinear,
                               OutOfSupport::Constant, 0.0);
  }
  if (!cfg.gt.empty()) {
    Volume3 gt = read_nifti(cfg.gt, VoxelKind::Label);
    if (!same_grid(gt, loaded.ct)) {
      gt = resample_like(gt, grid_of(loaded.ct), Interp::Nearest,
                         OutOfSupport::Constant, 0.0);
    }
    loaded.gt = std::move(gt);
  }
  return loaded;
}

struct Prepped {
  Volume3 ct;
  Volume3 pet;
  std::optional<Volume3> gt;
  Volume3 body_mask;  // original grid
  BoundingBox bbox;   // original grid, margin applied
  Index3 cropped_dims{0, 0, 0};
  double pet_mean = 0.0;
  double pet_std = 1.0;
  double ct_pad = 0.0;
  double pet_pad = 0.0;
};

Prepped preprocess_case(const PipelineConfig& cfg, const LoadedCase& loaded) {
  Prepped pre;
  pre.body_mask = extract_body_mask(loaded.ct, cfg.body_mask);
  pre.bbox = compute_bbox(pre.body_mask, cfg.crop.margin_mm);

  CropSpec spec;
  spec.bbox = pre.bbox;
  spec.margin_mm = cfg.crop.margin_mm;
  spec.pad_value_ct = cfg.crop.pad_value_ct;
  spec.pad_value_pet = cfg.crop.pad_value_pet;

  Volume3 ct = crop_with_padding(loaded.ct, spec);
  pre.cropped_dims = ct.dims;
  ct = resample(ct, cfg.target_spacing, Interp::Trilinear);
  Volume3 pet = crop_with_padding(loaded.pet, spec);
  pet = resample(pet, cfg.target_spacing, Interp::Trilinear);
  if (loaded.gt) {
    Volume3 gt = crop_with_padding(*loaded.gt, spec);
    pre.gt = resample(gt, cfg.target_spacing, Interp::Nearest);
  }

  pre.ct = normalize_ct(ct, cfg.normalization);
  pre.pet = normalize_pet(pet, &pre.pet_mean, &pre.pet_std);

  const double clipped_ct_pad =
      std::min(cfg.normalization.clip_hi,
               std::max(cfg.normalization.clip_lo, cfg.crop.pad_value_ct));
  pre.ct_pad = (clipped_ct_pad - cfg.normalization.mean) / cfg.normalization.std;
  pre.pet_pad = (cfg.crop.pad_value_pet - pre.pet_mean) / pre.pet_std;
  return pre;
}

Volume3 binarize(const Volume3& prob, double threshold) {
  Volume3 out = prob;
  out.kind = VoxelKind::Label;
  for (float& v : out.data)
    v = static_cast<double>(v) >= threshold ? 1.0f : 0.0f;
  return out;
}

struct FoldOutput {
  Volume3 prob;
  Volume3 mask;
  double duration_ms = 0.0;
};

FoldOutput run_fold(const PipelineConfig& cfg, const Prepped& pre,
                    const std::vector<MirrorVariant>& variants, const PatchGrid& grid,
                    const WeightKernel& kernel, const PredictorBinding& binding,
                    std::uint64_t case_key) {
  const auto start = Clock::now();
  const bool needs_gt = binding.kind == PredictorKind::Oracle;
  require(!needs_gt || pre.gt.has_value(), Errc::Precondition,
          "ORACLE folds need ground truth");

  std::vector<std::pair<MirrorVariant, Volume3>> variant_outputs;
  variant_outputs.reserve(variants.size());
  for (const MirrorVariant& variant : variants) {
    const Volume3 ct_v = apply_mirror(pre.ct, variant);
    const Volume3 pet_v = apply_mirror(pre.pet, variant);
    std::optional<Volume3> gt_v;
    if (needs_gt) gt_v = apply_mirror(*pre.gt, variant);

    std::vector<std::pair<Index3, Volume3>> outputs;
    outputs.reserve(grid.placements.size());
    for (std::size_t i = 0; i < grid.placements.size(); ++i) {
      const Index3& origin = grid.placements[i];
      const Volume3 ct_p = extract_patch(ct_v, origin, grid.patch_size, pre.ct_pad);
      const Volume3 pet_p = extract_patch(pet_v, origin, grid.patch_size, pre.pet_pad);
      Volume3 gt_p;
      PatchContext ctx;
      ctx.noise_key = mix_keys(case_key, i);
      if (gt_v) {
        gt_p = extract_patch(*gt_v, origin, grid.patch_size, 0.0);
        ctx.gt_patch = &gt_p;
      }
      outputs.emplace_back(origin, predict(binding, ct_p, pet_p, ctx));
    }

    Volume3 agg = aggregate(outputs, grid, kernel, pre.ct.dims);
    agg.spacing = pre.ct.spacing;
    agg.origin = pre.ct.origin;
    agg.direction = pre.ct.direction;
    variant_outputs.emplace_back(variant, std::move(agg));
  }

  FoldOutput out;
  out.prob = aggregate_tta(variant_outputs);
  out.mask = binarize(out.prob, cfg.binarize_threshold);
  out.duration_ms = ms_since(start);
  return out;
}

std::string degenerate_name(StapleDegenerate d) {
  switch (d) {
    case StapleDegenerate::None: return "NONE";
    case StapleDegenerate::AllEmpty: return "ALL_EMPTY";
    case StapleDegenerate::AllFull: return "ALL_FULL";
  }
  return "?";
}

std::string write_volume(const Volume3& vol, const fs::path& dir,
                         const std::string& name) {
  const fs::path path = dir / name;
  write_nifti(vol, path.string());
  return path.string();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::IoFailure,
          "cannot open for writing: " + path.string());
  out << text;
  require(static_cast<bool>(out), Errc::IoFailure, "write failed: " + path.string());
}

json report_json(const RunReport& report) {
  json j;
  j["engine_version"] = report.engine_version;
  j["case_id"] = report.case_id;
  j["preprocess_count"] = report.preprocess_count;
  j["workers"] = report.workers;
  j["preprocessed_dims"] = report.preprocessed_dims;
  j["tta"] = {{"variants_used", report.variants_used}};
  j["timings_ms"] = {{"read", report.timings.read_ms},
                     {"preprocess", report.timings.preprocess_ms},
                     {"inference", report.timings.inference_ms},
                     {"fusion", report.timings.fusion_ms},
                     {"postprocess", report.timings.postprocess_ms},
                     {"total", report.timings.total_ms}};
  j["folds"] = json::array();
  for (const FoldReport& f : report.folds) {
    json fj = {{"index", f.index},         {"kind", f.kind},
               {"seed", f.seed},           {"variants", f.variants},
               {"patches_per_variant", f.patches_per_variant},
               {"duration_ms", f.duration_ms}};
    j["folds"].push_back(fj);
  }
  j["fusion"] = {{"method", report.fusion.method},
                 {"p", report.fusion.p},
                 {"q", report.fusion.q},
                 {"iters", report.fusion.iters},
                 {"converged", report.fusion.converged},
                 {"degenerate", report.fusion.degenerate}};
  if (report.has_metrics) {
    j["metrics"] = {{"dice", report.metrics.dice},
                    {"fp_volume_ml", report.metrics.fp_volume_ml},
                    {"fn_volume_ml", report.metrics.fn_volume_ml},
                    {"tp", report.metrics.tp},
                    {"fp", report.metrics.fp},
                    {"fn", report.metrics.fn},
                    {"tn", report.metrics.tn}};
  }
  j["outputs"] = report.outputs;
  j["config"] = json::parse(report.config_json);
  return j;
}

}  // namespace

int resolve_workers(const PipelineConfig& config, int cli_workers) {
  if (cli_workers > 0) return cli_workers;
  if (config.workers > 0) return config.workers;
  if (const char* env = std::getenv("PETFUSE_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    require(end != env && *end == '\0' && v >= 1, Errc::ConfigError,
            "PETFUSE_WORKERS must be a positive integer");
    return static_cast<int>(v);
  }
  return 1;
}

RunReport run_case(const PipelineConfig& config) {
  const auto t_total = Clock::now();
  require(!config.folds.empty(), Errc::ConfigError, "\"folds\" must not be empty");
  for (const PredictorBinding& binding : config.folds) {
    require(binding.kind != PredictorKind::Oracle || !config.gt.empty(),
            Errc::ConfigError, "ORACLE folds require a \"gt\" path");
  }

  RunReport report;
  report.engine_version = kEngineVersion;
  report.case_id =
      config.case_id.empty() ? derive_case_id(config.input_ct) : config.case_id;
  report.workers = resolve_workers(config, 0);
  report.config_json = config_to_json(config);

  auto t_stage = Clock::now();
  const LoadedCase loaded = load_case(config);
  report.timings.read_ms = ms_since(t_stage);

  t_stage = Clock::now();
  const Prepped pre = preprocess_case(config, loaded);
  report.preprocess_count = 1;
  report.timings.preprocess_ms = ms_since(t_stage);
  report.preprocessed_dims = pre.ct.dims;

  const std::vector<MirrorVariant> variants = select_variants(pre.ct.dims, config.tta);
  report.variants_used = static_cast<int>(variants.size());
  const PatchGrid grid =
      plan_patches(pre.ct.dims, config.patch.size, config.patch.overlap_frac);
  const WeightKernel kernel =
      make_weight_kernel(config.patch.size, config.patch.sigma_scale);
  const std::uint64_t case_key = fnv1a64(report.case_id);

  t_stage = Clock::now();
  const std::size_t n_folds = config.folds.size();
  std::vector<FoldOutput> outputs(n_folds);
  std::vector<std::string> errors(n_folds);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    while (true) {
      const std::size_t f = next.fetch_add(1);
      if (f >= n_folds) break;
      try {
        outputs[f] = run_fold(config, pre, variants, grid, kernel, config.folds[f],
                              case_key);
      } catch (const std::exception& e) {
        errors[f] = e.what();
        if (errors[f].empty()) errors[f] = "unknown error";
      }
    }
  };
  const int n_threads =
      std::min<int>(report.workers, static_cast<int>(n_folds));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  report.timings.inference_ms = ms_since(t_stage);

  std::string fold_failures;
  for (std::size_t f = 0; f < n_folds; ++f) {
    if (errors[f].empty()) continue;
    if (!fold_failures.empty()) fold_failures += "; ";
    fold_failures += "fold " + std::to_string(f) + ": " + errors[f];
  }
  if (!fold_failures.empty()) fail(Errc::PartialFailure, fold_failures);

  for (std::size_t f = 0; f < n_folds; ++f) {
    FoldReport fr;
    fr.index = static_cast<int>(f);
    fr.kind = predictor_kind_name(config.folds[f].kind);
    fr.seed = config.folds[f].seed;
    fr.variants = static_cast<int>(variants.size());
    fr.patches_per_variant = static_cast<int>(grid.placements.size());
    fr.duration_ms = outputs[f].duration_ms;
    report.folds.push_back(fr);
  }

  t_stage = Clock::now();
  Volume3 consensus_pre;
  report.fusion.method = fusion_method_name(config.fusion_method);
  if (config.fusion_method == FusionMethod::Staple) {
    RaterStack stack;
    stack.masks.reserve(n_folds);
    for (const FoldOutput& out : outputs) stack.masks.push_back(out.mask);
    const FusionResult fused = staple(stack, config.staple);
    consensus_pre = fused.consensus;
    report.fusion.p = fused.p;
    report.fusion.q = fused.q;
    report.fusion.iters = fused.iters;
    report.fusion.converged = fused.converged;
    report.fusion.degenerate = degenerate_name(fused.degenerate);
  } else if (config.fusion_method == FusionMethod::Majority) {
    RaterStack stack;
    stack.masks.reserve(n_folds);
    for (const FoldOutput& out : outputs) stack.masks.push_back(out.mask);
    consensus_pre = majority_vote(stack);
  } else {
    std::vector<Volume3> probs;
    probs.reserve(n_folds);
    for (const FoldOutput& out : outputs) probs.push_back(out.prob);
    consensus_pre = mean_prob_fusion(probs, config.binarize_threshold);
  }
  report.timings.fusion_ms = ms_since(t_stage);

  t_stage = Clock::now();
  Volume3 consensus = resample_like(consensus_pre, grid_of(loaded.ct), Interp::Nearest,
                                    OutOfSupport::Constant, 0.0);

  if (loaded.gt) {
    report.metrics = evaluate_masks(consensus, *loaded.gt);
    report.has_metrics = true;
  }

  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir);
  report.outputs.push_back(write_volume(consensus, out_dir, "consensus.nii.gz"));
  report.outputs.push_back(
      write_volume(consensus_pre, out_dir, "consensus_pre.nii.gz"));
  for (std::size_t f = 0; f < n_folds; ++f) {
    report.outputs.push_back(write_volume(
        outputs[f].mask, out_dir, "fold_" + std::to_string(f) + "_mask.nii.gz"));
  }
  report.timings.postprocess_ms = ms_since(t_stage);
  report.timings.total_ms = ms_since(t_total);

  const fs::path report_path = out_dir / "report.json";
  report.outputs.push_back(report_path.string());
  write_text(report_path, report_to_json(report) + "\n");
  return report;
}

PreprocessReport run_preprocess(const PipelineConfig& config) {
  PreprocessReport report;
  report.case_id =
      config.case_id.empty() ? derive_case_id(config.input_ct) : config.case_id;

  const LoadedCase loaded = load_case(config);
  const Prepped pre = preprocess_case(config, loaded);
  report.bbox = pre.bbox;
  report.cropped_dims = pre.cropped_dims;
  report.preprocessed_dims = pre.ct.dims;
  report.pet_mean = pre.pet_mean;
  report.pet_std = pre.pet_std;

  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir);
  report.outputs.push_back(write_volume(pre.body_mask, out_dir, "body_mask.nii.gz"));
  report.outputs.push_back(write_volume(pre.ct, out_dir, "pre_ct.nii.gz"));
  report.outputs.push_back(write_volume(pre.pet, out_dir, "pre_pet.nii.gz"));
  if (pre.gt)
    report.outputs.push_back(write_volume(*pre.gt, out_dir, "pre_gt.nii.gz"));

  const fs::path path = out_dir / "preprocess.json";
  report.outputs.push_back(path.string());
  json j;
  j["engine_version"] = kEngineVersion;
  j["case_id"] = report.case_id;
  j["bbox_lo"] = report.bbox.lo;
  j["bbox_hi"] = report.bbox.hi;
  j["cropped_dims"] = report.cropped_dims;
  j["preprocessed_dims"] = report.preprocessed_dims;
  j["pet_mean"] = report.pet_mean;
  j["pet_std"] = report.pet_std;
  j["outputs"] = report.outputs;
  j["config"] = json::parse(config_to_json(config));
  write_text(path, j.dump(2) + "\n");
  return report;
}

namespace {

struct ManifestRow {
  std::string case_id;
  std::string ct;
  std::string pet;
  std::string gt;
};

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<ManifestRow> parse_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::ConfigError,
          "cannot read manifest: " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t line_no = 0;
  bool first_row = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(stripped);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    const bool header = first_row && !cells.empty() && cells[0] == "case_id";
    first_row = false;
    if (header) continue;
    require(cells.size() == 3 || cells.size() == 4, Errc::ConfigError,
            "manifest line " + std::to_string(line_no) +
                " must be case_id,ct,pet[,gt]");
    ManifestRow row;
    row.case_id = cells[0];
    row.ct = cells[1];
    row.pet = cells[2];
    if (cells.size() == 4) row.gt = cells[3];
    require(!row.case_id.empty() && !row.ct.empty() && !row.pet.empty(),
            Errc::ConfigError,
            "manifest line " + std::to_string(line_no) + " has empty fields");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

BatchSummary run_batch(const std::string& manifest_path, const PipelineConfig& base,
                       int jobs) {
  require(jobs >= 1, Errc::ConfigError, "batch jobs must be positive");
  const std::vector<ManifestRow> rows = parse_manifest(manifest_path);

  BatchSummary summary;
  summary.cases.resize(rows.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= rows.size()) break;
      const ManifestRow& row = rows[i];
      BatchCase& out = summary.cases[i];
      out.case_id = row.case_id;
      PipelineConfig cfg = base;
      cfg.case_id = row.case_id;
      cfg.input_ct = row.ct;
      cfg.input_pet = row.pet;
      cfg.gt = row.gt;
      cfg.output_dir = (fs::path(base.output_dir) / row.case_id).string();
      try {
        const RunReport report = run_case(cfg);
        out.ok = true;
        out.total_ms = report.timings.total_ms;
        if (report.has_metrics) {
          out.has_dice = true;
          out.dice = report.metrics.dice;
        }
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
      }
    }
  };
  const int n_threads = std::min<int>(jobs, static_cast<int>(rows.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  double dice_sum = 0.0;
  int dice_n = 0;
  double ms_sum = 0.0;
  for (const BatchCase& c : summary.cases) {
    if (c.ok) {
      ++summary.succeeded;
      ms_sum += c.total_ms;
      if (c.has_dice) {
        dice_sum += c.dice;
        ++dice_n;
      }
    } else {
      ++summary.failed;
    }
  }
  if (dice_n > 0) {
    summary.has_mean_dice = true;
    summary.mean_dice = dice_sum / dice_n;
  }
  if (summary.succeeded > 0) summary.mean_total_ms = ms_sum / summary.succeeded;

  const fs::path out_dir(base.output_dir);
  fs::create_directories(out_dir);
  write_text(out_dir / "batch_summary.json", batch_summary_to_json(summary) + "\n");
  return summary;
}

std::string report_to_json(const RunReport& report, int indent) {
  return report_json(report).dump(indent);
}

std::string batch_summary_to_json(const BatchSummary& summary, int indent) {
  json j;
  j["engine_version"] = kEngineVersion;
  j["cases"] = json::array();
  for (const BatchCase& c : summary.cases) {
    json cj;
    cj["case_id"] = c.case_id;
    cj["status"] = c.ok ? "ok" : "failed";
    if (!c.ok) cj["error"] = c.error;
    if (c.has_dice) cj["dice"] = c.dice;
    if (c.ok) cj["total_ms"] = c.total_ms;
    j["cases"].push_back(cj);
  }
  j["succeeded"] = summary.succeeded;
  j["failed"] = summary.failed;
  if (summary.has_mean_dice) j["mean_dice"] = summary.mean_dice;
  j["mean_total_ms"] = summary.mean_total_ms;
  return j.dump(indent);
}

}  // namespace petfuse
