#pragma once

#include <optional>
#include <vector>

#include "petfuse/volume.hpp"

namespace petfuse {

// R binary rater masks on one shared grid.
struct RaterStack {
  std::vector<Volume3> masks;
};

// STAPLE hyperparameters. prior_gamma left empty selects AUTO: the mean
// foreground fraction across raters, clamped to [1e-6, 1-1e-6].
struct StapleParams {
  double init_p = 0.99;
  double init_q = 0.99;
  std::optional<double> prior_gamma;
  double tol = 1e-7;
  int max_iters = 100;
  double clamp_eps = 1e-7;
  bool record_trace = false;
};

enum class StapleDegenerate { None, AllEmpty, AllFull };

// Snapshot after one EM iteration: W after the E-step, p/q after the M-step.
struct StapleIterate {
  std::vector<double> weights;
  std::vector<double> p;
  std::vector<double> q;
};

struct FusionResult {
  Volume3 consensus;       // LABEL, weights >= 0.5
  Volume3 weights;         // PROBABILITY, final per-voxel W
  std::vector<double> p;   // per-rater sensitivity
  std::vector<double> q;   // per-rater specificity
  int iters = 0;
  bool converged = false;
  StapleDegenerate degenerate = StapleDegenerate::None;
  std::vector<double> deltas;        // max |dW| per iteration, from the second on
  std::vector<StapleIterate> trace;  // filled when record_trace
};

// Binary STAPLE EM in log space. One iteration is an E-step followed by an
// M-step; from the second iteration on, the max |dW| against the previous
// E-step is recorded and, when it drops below tol, the loop stops before that
// iteration's M-step with converged = true. iters counts E-steps. Unanimous
// all-empty or all-full stacks short-circuit (iters = 0, converged = true,
// flagged in `degenerate`) instead of erroring.
//
// The E-step log-term sums and the M-step reductions accumulate their terms
// in sorted order, so permuting the raters permutes p/q exactly and leaves W
// and the consensus bitwise unchanged.
FusionResult staple(const RaterStack& stack, const StapleParams& params);

// Foreground where foreground votes reach ceil((R+1)/2); even-R ties go to
// background.
Volume3 majority_vote(const RaterStack& stack);

// Voxelwise mean of the maps (reduced in list order) thresholded at
// `threshold`, inclusive.
Volume3 mean_prob_fusion(const std::vector<Volume3>& maps, double threshold);

}  // namespace petfuse
