// Acceptance gate. Each release criterion prints exactly one PASS or FAIL
// line with the measured numbers; the process exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "petfuse/config.hpp"
#include "petfuse/fusion.hpp"
#include "petfuse/metrics.hpp"
#include "petfuse/nifti.hpp"
#include "petfuse/patching.hpp"
#include "petfuse/pipeline.hpp"
#include "petfuse/preprocess.hpp"
#include "petfuse/tta.hpp"
#include "petfuse/volume.hpp"

#include "oracles.hpp"
#include "phantom.hpp"
#include "test_volumes.hpp"

namespace {

using namespace petfuse;
using Clock = std::chrono::steady_clock;

int g_failed = 0;
int g_total = 0;

void verdict(bool ok, const std::string& line) {
  ++g_total;
  if (!ok) ++g_failed;
  std::printf("%s: %s\n", ok ? "PASS" : "FAIL", line.c_str());
  std::fflush(stdout);
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return std::string(buf);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "<unreadable:" + path + ">";
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::vector<std::vector<unsigned char>> to_bytes(const RaterStack& stack) {
  std::vector<std::vector<unsigned char>> bytes;
  bytes.reserve(stack.masks.size());
  for (const Volume3& mask : stack.masks) {
    std::vector<unsigned char> m(mask.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask.data[i] != 0.0f ? 1 : 0;
    bytes.push_back(std::move(m));
  }
  return bytes;
}

bool payload_equals_mask(const Volume3& consensus, const Volume3& mask) {
  if (consensus.dims != mask.dims) return false;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (consensus.data[i] != mask.data[i]) return false;
  return true;
}

// Criterion: STAPLE agrees with an independently written brute-force EM on
// every iteration of every random stack, and lands on the same consensus.
void check_staple_equivalence() {
  std::mt19937 rng(7101);
  const Index3 dims{10, 10, 10};
  const int rater_counts[] = {2, 3, 5};
  const auto t0 = Clock::now();

  int stacks = 0;
  double worst = 0.0;
  bool structure_ok = true;
  bool consensus_ok = true;
  for (int round = 0; round < 18 && structure_ok && consensus_ok; ++round) {
    for (int R : rater_counts) {
      RaterStack stack;
      for (int j = 0; j < R; ++j)
        stack.masks.push_back(testutil::random_mask(rng, dims, 0.35));

      StapleParams params;
      params.record_trace = true;
      const FusionResult got = staple(stack, params);
      const oracle::StapleResult want = oracle::staple_em(
          to_bytes(stack), params.init_p, params.init_q, params.prior_gamma,
          params.tol, params.max_iters, params.clamp_eps);
      ++stacks;

      if (got.iters != want.iters || got.converged != want.converged ||
          got.trace.size() != want.trace.size()) {
        structure_ok = false;
        break;
      }
      for (std::size_t it = 0; it < got.trace.size(); ++it) {
        const StapleIterate& a = got.trace[it];
        const oracle::StapleIter& b = want.trace[it];
        for (std::size_t i = 0; i < b.w.size(); ++i)
          worst = std::max(worst, std::fabs(a.weights[i] - b.w[i]));
        for (int j = 0; j < R; ++j) {
          worst = std::max(worst, std::fabs(a.p[j] - b.p[j]));
          worst = std::max(worst, std::fabs(a.q[j] - b.q[j]));
        }
      }
      for (std::size_t i = 0; i < want.consensus.size(); ++i) {
        const bool fg = got.consensus.data[i] != 0.0f;
        if (fg != (want.consensus[i] != 0)) {
          consensus_ok = false;
          break;
        }
      }
    }
  }
  const double dt = seconds_since(t0);
  const bool ok =
      structure_ok && consensus_ok && worst <= 1e-9 && dt < 10.0 && stacks >= 50;
  verdict(ok, fmt("staple matches the brute-force EM reference on %d random "
                  "stacks: max per-iteration deviation %.2e, runtime %.2f s",
                  stacks, worst, dt));
}

// Criterion: R identical raters fuse to the input mask itself.
void check_unanimity() {
  std::mt19937 rng(7202);
  bool ok = true;
  int fixtures = 0;
  const Index3 sizes[] = {{6, 5, 4}, {12, 12, 12}, {9, 3, 7}};
  for (const Index3& dims : sizes) {
    for (int R : {1, 3, 5}) {
      const Volume3 mask = testutil::random_mask(rng, dims, 0.3);
      RaterStack stack;
      for (int j = 0; j < R; ++j) stack.masks.push_back(mask);
      const FusionResult got = staple(stack, StapleParams{});
      ok = ok && payload_equals_mask(got.consensus, mask);
      ++fixtures;
    }
  }
  for (float fill : {0.0f, 1.0f}) {
    const Volume3 mask = make_volume({5, 5, 5}, VoxelKind::Label, fill);
    RaterStack stack;
    stack.masks.assign(4, mask);
    const FusionResult got = staple(stack, StapleParams{});
    ok = ok && payload_equals_mask(got.consensus, mask) &&
         got.degenerate != StapleDegenerate::None;
    ++fixtures;
  }
  verdict(ok, fmt("unanimous stacks reproduce the input mask on %d fixtures "
                  "including the all-empty and all-full cases",
                  fixtures));
}

// Criterion: dice equals the exhaustive confusion-count formula exactly, and
// the 4-versus-4 masks sharing 2 voxels score exactly 0.5.
void check_dice_oracle() {
  std::mt19937 rng(7303);
  const Index3 dims{16, 16, 16};
  bool ok = true;
  for (int t = 0; t < 100; ++t) {
    const double p_fg = t == 0 ? 0.0 : 0.05 + 0.55 * (t / 100.0);
    const Volume3 pred = testutil::random_mask(rng, dims, p_fg);
    const Volume3 gt = testutil::random_mask(rng, dims, p_fg);
    const CaseMetrics m = evaluate_masks(pred, gt);
    const oracle::Confusion c = oracle::confusion_counts(pred, gt);
    const double expected =
        (c.tp + c.fp + c.fn) == 0
            ? 1.0
            : 2.0 * static_cast<double>(c.tp) /
                  (2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp) +
                   static_cast<double>(c.fn));
    ok = ok && m.tp == c.tp && m.fp == c.fp && m.fn == c.fn && m.tn == c.tn &&
         m.dice == expected;
  }

  Volume3 pred = make_volume({8, 8, 8}, VoxelKind::Label);
  Volume3 gt = make_volume({8, 8, 8}, VoxelKind::Label);
  for (int x = 0; x < 4; ++x) pred.at(x, 0, 0) = 1.0f;
  for (int x = 2; x < 6; ++x) gt.at(x, 0, 0) = 1.0f;
  const double half = dice(pred, gt);
  ok = ok && half == 0.5;
  verdict(ok, fmt("dice matches the confusion-count formula exactly on 100 "
                  "random 16^3 pairs and scores %.6f on the half-overlap case",
                  half));
}

// Criterion: every mirror variant is an involution, bit for bit.
void check_mirror_involution() {
  std::mt19937 rng(7404);
  const std::vector<MirrorVariant> variants = all_mirror_variants();
  bool ok = variants.size() == 8;
  int checks = 0;
  for (int t = 0; t < 20; ++t) {
    const Index3 dims{1 + static_cast<int>(rng() % 12),
                      1 + static_cast<int>(rng() % 12),
                      1 + static_cast<int>(rng() % 12)};
    Volume3 vol = testutil::random_volume(rng, dims, VoxelKind::PET, -5.0f, 9.0f);
    testutil::randomize_metadata(rng, vol);
    for (const MirrorVariant& v : variants) {
      ok = ok && bitwise_equal(apply_mirror(apply_mirror(vol, v), v), vol);
      ++checks;
    }
  }
  verdict(ok, fmt("mirroring twice restores all %d variant/volume "
                  "combinations bitwise",
                  checks));
}

// Criterion: identity resampling is bit-exact, constant volumes survive 2x
// up- and downsampling within 1e-6, and a ramp matches brute-force trilinear
// interpolation within 1e-6.
void check_resampling() {
  std::mt19937 rng(7505);
  Volume3 vol = testutil::random_volume(rng, {7, 6, 5}, VoxelKind::CT, -100.0f, 100.0f);
  vol.spacing = {2.0, 2.0, 2.0};
  vol.origin = {11.5, -3.25, 40.0};
  bool ok = bitwise_equal(resample(vol, {2.0, 2.0, 2.0}, Interp::Trilinear), vol) &&
            bitwise_equal(resample(vol, {2.0, 2.0, 2.0}, Interp::Nearest), vol);

  Volume3 flat = make_volume({8, 8, 8}, VoxelKind::PET, 3.25f);
  flat.spacing = {2.0, 2.0, 2.0};
  double worst_flat = 0.0;
  const Real3 targets[] = {{1.0, 1.0, 1.0}, {4.0, 4.0, 4.0}};
  for (const Real3& target : targets) {
    const Volume3 out = resample(flat, target, Interp::Trilinear);
    ok = ok && !out.data.empty();
    for (float v : out.data)
      worst_flat = std::max(worst_flat, std::fabs(static_cast<double>(v) - 3.25));
  }
  ok = ok && worst_flat <= 1e-6;

  Volume3 ramp = testutil::ramp_volume({4, 4, 4}, VoxelKind::PET);
  for (float& v : ramp.data) v /= 64.0f;
  ramp.spacing = {2.0, 3.0, 4.0};
  ramp.origin = {5.0, -3.0, 1.0};
  const Volume3 out = resample(ramp, {1.0, 1.5, 2.0}, Interp::Trilinear);
  double worst_ramp = 0.0;
  for (int z = 0; z < out.dims[2]; ++z) {
    for (int y = 0; y < out.dims[1]; ++y) {
      for (int x = 0; x < out.dims[0]; ++x) {
        const double sx = (out.origin[0] + x * out.spacing[0] - ramp.origin[0]) / ramp.spacing[0];
        const double sy = (out.origin[1] + y * out.spacing[1] - ramp.origin[1]) / ramp.spacing[1];
        const double sz = (out.origin[2] + z * out.spacing[2] - ramp.origin[2]) / ramp.spacing[2];
        const double want = oracle::trilinear_sample(ramp, sx, sy, sz);
        worst_ramp = std::max(worst_ramp, std::fabs(out.at(x, y, z) - want));
      }
    }
  }
  ok = ok && worst_ramp <= 1e-6;
  verdict(ok, fmt("resampling: identity bit-exact, constants within %.2e "
                  "under 2x scaling, ramp within %.2e of brute-force trilinear",
                  worst_flat, worst_ramp));
}

// Criterion: the reference geometry yields 36 placements and random
// geometries are always fully covered.
void check_patch_plan() {
  const PatchGrid ref = plan_patches({400, 400, 400}, {224, 192, 224}, 0.5);
  bool ok = ref.placements.size() == 36;

  std::mt19937 rng(7606);
  const double overlaps[] = {0.0, 0.25, 0.5};
  int covered = 0;
  for (int t = 0; t < 200 && ok; ++t) {
    const Index3 dims{1 + static_cast<int>(rng() % 64),
                      1 + static_cast<int>(rng() % 64),
                      1 + static_cast<int>(rng() % 64)};
    const Index3 patch{1 + static_cast<int>(rng() % 32),
                       1 + static_cast<int>(rng() % 32),
                       1 + static_cast<int>(rng() % 32)};
    const double overlap = overlaps[rng() % 3];
    const PatchGrid grid = plan_patches(dims, patch, overlap);
    for (int a = 0; a < 3; ++a)
      ok = ok && grid.padded_dims[a] == std::max(dims[a], patch[a]);

    std::vector<char> hit(static_cast<std::size_t>(grid.padded_dims[0]) *
                              grid.padded_dims[1] * grid.padded_dims[2],
                          0);
    for (const Index3& o : grid.placements) {
      for (int a = 0; a < 3; ++a)
        ok = ok && o[a] >= 0 && o[a] + patch[a] <= grid.padded_dims[a];
      if (!ok) break;
      for (int z = o[2]; z < o[2] + patch[2]; ++z)
        for (int y = o[1]; y < o[1] + patch[1]; ++y)
          for (int x = o[0]; x < o[0] + patch[0]; ++x)
            hit[(static_cast<std::size_t>(z) * grid.padded_dims[1] + y) *
                    grid.padded_dims[0] +
                x] = 1;
    }
    for (char h : hit) ok = ok && h == 1;
    if (ok) ++covered;
  }
  verdict(ok, fmt("patch planning: reference geometry yields %zu placements "
                  "and %d random geometries are fully covered",
                  ref.placements.size(), covered));
}

// Criterion: constant patch outputs aggregate back to the same constant.
void check_aggregation_neutrality() {
  std::mt19937 rng(7707);
  const double overlaps[] = {0.0, 0.25, 0.5};
  double worst = 0.0;
  int grids = 0;
  for (int t = 0; t < 10; ++t) {
    const Index3 dims{4 + static_cast<int>(rng() % 37),
                      4 + static_cast<int>(rng() % 37),
                      4 + static_cast<int>(rng() % 37)};
    const Index3 patch{4 + static_cast<int>(rng() % 13),
                       4 + static_cast<int>(rng() % 13),
                       4 + static_cast<int>(rng() % 13)};
    const double overlap = overlaps[rng() % 3];
    const float c = 0.05f + 0.9f * static_cast<float>(rng() % 1000) / 1000.0f;

    const PatchGrid grid = plan_patches(dims, patch, overlap);
    const WeightKernel kernel = make_weight_kernel(patch, 0.125);
    std::vector<std::pair<Index3, Volume3>> outputs;
    outputs.reserve(grid.placements.size());
    for (const Index3& o : grid.placements)
      outputs.emplace_back(o, make_volume(patch, VoxelKind::Probability, c));

    const Volume3 agg = aggregate(outputs, grid, kernel, dims);
    for (float v : agg.data)
      worst = std::max(worst, std::fabs(static_cast<double>(v) - c));
    ++grids;
  }
  const bool ok = worst <= 1e-6;
  verdict(ok, fmt("aggregation is neutral for constant patches on %d random "
                  "grids: max deviation %.2e",
                  grids, worst));
}

PipelineConfig phantom_pipeline_config(const testutil::TempDir& dir) {
  PipelineConfig cfg = default_config();
  cfg.case_id = "phantom96";
  cfg.input_ct = dir.str("ct.nii.gz");
  cfg.input_pet = dir.str("pet.nii.gz");
  cfg.gt = dir.str("gt.nii.gz");
  cfg.patch.size = {64, 64, 64};
  cfg.folds.clear();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    PredictorBinding b;
    b.kind = PredictorKind::Oracle;
    b.seed = seed;
    b.noise_amp = 0.05;
    b.smooth_sigma_mm = 1.0;
    cfg.folds.push_back(b);
  }
  return cfg;
}

// Criteria: the noisy five-fold phantom run recovers the lesions, and its
// outputs do not depend on the worker count.
void check_phantom_end_to_end() {
  testutil::TempDir dir("petfuse_accept_phantom");
  const testutil::PhantomCase ph = testutil::make_phantom(96);
  write_nifti(ph.ct, dir.str("ct.nii.gz"));
  write_nifti(ph.pet, dir.str("pet.nii.gz"));
  write_nifti(ph.gt, dir.str("gt.nii.gz"));

  PipelineConfig cfg = phantom_pipeline_config(dir);
  cfg.workers = 1;
  cfg.output_dir = dir.str("w1");
  const auto t0 = Clock::now();
  const RunReport r1 = run_case(cfg);
  const double dt = seconds_since(t0);

  const bool ok8 = r1.has_metrics && r1.metrics.dice >= 0.99 &&
                   r1.variants_used == 8 && r1.fusion.method == "STAPLE" &&
                   dt < 60.0;
  verdict(ok8, fmt("end-to-end phantom: 5 noisy oracle folds with full TTA "
                   "and STAPLE reach dice %.4f in %.1f s single-worker",
                   r1.has_metrics ? r1.metrics.dice : -1.0, dt));

  cfg.workers = 2;
  cfg.output_dir = dir.str("w2");
  const RunReport r2 = run_case(cfg);
  cfg.workers = 5;
  cfg.output_dir = dir.str("w5");
  const RunReport r5 = run_case(cfg);

  bool ok9 = true;
  std::vector<std::string> names = {"consensus.nii.gz", "consensus_pre.nii.gz"};
  for (int k = 0; k < 5; ++k)
    names.push_back("fold_" + std::to_string(k) + "_mask.nii.gz");
  for (const std::string& name : names) {
    const std::string ref = slurp(dir.str("w1/" + name));
    ok9 = ok9 && ref == slurp(dir.str("w2/" + name)) &&
          ref == slurp(dir.str("w5/" + name));
  }
  for (const RunReport* r : {&r2, &r5}) {
    ok9 = ok9 && r->fusion.method == r1.fusion.method &&
          r->fusion.p == r1.fusion.p && r->fusion.q == r1.fusion.q &&
          r->fusion.iters == r1.fusion.iters &&
          r->fusion.converged == r1.fusion.converged &&
          r->fusion.degenerate == r1.fusion.degenerate;
  }
  verdict(ok9, fmt("determinism: workers 1, 2, and 5 write byte-identical "
                   "volumes (%zu files compared) and identical fusion "
                   "diagnostics",
                   names.size()));
}

// Criterion: shrinking the voxel budget switches the run from 8 mirror
// variants to the identity plus x-flip pair, and the report says so.
void check_tta_budget_switch() {
  testutil::TempDir dir("petfuse_accept_tta");
  const testutil::PhantomCase ph = testutil::make_phantom(48);
  write_nifti(ph.ct, dir.str("ct.nii.gz"));
  write_nifti(ph.pet, dir.str("pet.nii.gz"));
  write_nifti(ph.gt, dir.str("gt.nii.gz"));

  PipelineConfig cfg = default_config();
  cfg.case_id = "phantom48";
  cfg.input_ct = dir.str("ct.nii.gz");
  cfg.input_pet = dir.str("pet.nii.gz");
  cfg.gt = dir.str("gt.nii.gz");
  cfg.patch.size = {32, 32, 32};
  PredictorBinding b;
  b.kind = PredictorKind::Oracle;
  b.seed = 1;
  cfg.folds.assign(1, b);
  cfg.workers = 1;

  cfg.output_dir = dir.str("full");
  const RunReport full = run_case(cfg);
  cfg.tta.voxel_budget = 1;
  cfg.output_dir = dir.str("reduced");
  const RunReport reduced = run_case(cfg);

  const bool ok = full.variants_used == 8 && full.folds.at(0).variants == 8 &&
                  reduced.variants_used == 2 && reduced.folds.at(0).variants == 2;
  verdict(ok, fmt("dynamic TTA: the run drops from %d to %d mirror variants "
                  "when the voxel budget shrinks, as reported",
                  full.variants_used, reduced.variants_used));
}

// Criterion: writing and re-reading never perturbs a payload bit.
void check_nifti_round_trip() {
  testutil::TempDir dir("petfuse_accept_nifti");
  std::mt19937 rng(7811);
  const VoxelKind kinds[] = {VoxelKind::CT, VoxelKind::PET, VoxelKind::Probability,
                             VoxelKind::Label};
  bool ok = true;
  for (int t = 0; t < 20; ++t) {
    const Index3 dims{1 + static_cast<int>(rng() % 24),
                      1 + static_cast<int>(rng() % 24),
                      1 + static_cast<int>(rng() % 24)};
    const VoxelKind kind = kinds[t % 4];
    Volume3 vol;
    if (kind == VoxelKind::Label)
      vol = testutil::random_mask(rng, dims, 0.4);
    else if (kind == VoxelKind::Probability)
      vol = testutil::random_volume(rng, dims, kind, 0.0f, 1.0f);
    else
      vol = testutil::random_volume(rng, dims, kind, -2000.0f, 3000.0f);
    testutil::randomize_metadata(rng, vol);

    const std::string path =
        dir.str("rt_" + std::to_string(t) + (t % 2 ? ".nii" : ".nii.gz"));
    write_nifti(vol, path);
    const Volume3 back = read_nifti(path, vol.kind);
    ok = ok && bitwise_equal(back, vol);
  }
  verdict(ok, "nifti round trip is bit-exact for 20 random volumes across "
              "all voxel kinds, compressed and plain");
}

}  // namespace

int main() {
  check_staple_equivalence();
  check_unanimity();
  check_dice_oracle();
  check_mirror_involution();
  check_resampling();
  check_patch_plan();
  check_aggregation_neutrality();
  check_phantom_end_to_end();
  check_tta_budget_switch();
  check_nifti_round_trip();

  std::printf("%d of %d acceptance criteria passed\n", g_total - g_failed, g_total);
  return g_failed == 0 ? 0 : 1;
}
