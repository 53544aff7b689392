#include "petfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "petfuse/error.hpp"

namespace petfuse {

namespace {

void check_stack(const std::vector<Volume3>& masks) {
  require(!masks.empty(), Errc::EmptyList, "rater stack is empty");
  const Volume3& ref = masks.front();
  for (const Volume3& m : masks) {
    require(m.kind == VoxelKind::Label, Errc::Precondition, "rater masks must be LABEL");
    require(same_grid(m, ref), Errc::GridMismatch, "rater masks must share one grid");
  }
}

double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

}  // namespace

FusionResult staple(const RaterStack& stack, const StapleParams& params) {
  check_stack(stack.masks);
  const int R = static_cast<int>(stack.masks.size());
  require(R <= 64, Errc::Precondition, "at most 64 raters are supported");
  require(params.init_p > 0.0 && params.init_p < 1.0 && params.init_q > 0.0 &&
              params.init_q < 1.0,
          Errc::Precondition, "init_p and init_q must lie in (0,1)");
  require(params.tol > 0.0, Errc::Precondition, "tol must be positive");
  require(params.max_iters >= 1, Errc::Precondition, "max_iters must be at least 1");
  require(params.clamp_eps > 0.0 && params.clamp_eps < 0.5, Errc::Precondition,
          "clamp_eps must lie in (0, 0.5)");

  const Volume3& ref = stack.masks.front();
  const std::size_t total = ref.size();
  const double eps = params.clamp_eps;
  const auto clamp_param = [eps](double v) {
    return std::min(1.0 - eps, std::max(eps, v));
  };

  FusionResult result;
  result.p.assign(R, clamp_param(params.init_p));
  result.q.assign(R, clamp_param(params.init_q));

  // Per-voxel vote pattern, bit j set when rater j marks foreground.
  std::vector<std::uint64_t> pattern(total, 0);
  std::uint64_t fg_total = 0;
  for (int j = 0; j < R; ++j) {
    const std::vector<float>& d = stack.masks[j].data;
    for (std::size_t i = 0; i < total; ++i) {
      if (d[i] != 0.0f) {
        pattern[i] |= std::uint64_t{1} << j;
        ++fg_total;
      }
    }
  }

  if (fg_total == 0 || fg_total == static_cast<std::uint64_t>(R) * total) {
    const bool full = fg_total != 0;
    result.degenerate = full ? StapleDegenerate::AllFull : StapleDegenerate::AllEmpty;
    result.converged = true;
    result.consensus = make_volume(ref.dims, VoxelKind::Label, full ? 1.0f : 0.0f);
    result.weights = make_volume(ref.dims, VoxelKind::Probability, full ? 1.0f : 0.0f);
    result.consensus.spacing = result.weights.spacing = ref.spacing;
    result.consensus.origin = result.weights.origin = ref.origin;
    result.consensus.direction = result.weights.direction = ref.direction;
    return result;
  }

  double gamma;
  if (params.prior_gamma) {
    gamma = *params.prior_gamma;
    require(gamma > 0.0 && gamma < 1.0, Errc::Precondition,
            "prior_gamma must lie in (0,1)");
  } else {
    gamma = static_cast<double>(fg_total) / (static_cast<double>(R) * total);
    gamma = std::min(1.0 - 1e-6, std::max(1e-6, gamma));
  }
  const double log_gamma = std::log(gamma);
  const double log_1m_gamma = std::log(1.0 - gamma);

  // Voxels sharing a vote pattern share W, so EM runs over the distinct
  // patterns with multiplicities.
  std::vector<std::uint64_t> pats(pattern.begin(), pattern.end());
  std::sort(pats.begin(), pats.end());
  pats.erase(std::unique(pats.begin(), pats.end()), pats.end());
  const std::size_t P = pats.size();
  std::vector<double> count(P, 0.0);
  for (std::uint64_t m : pattern) {
    const std::size_t k = static_cast<std::size_t>(
        std::lower_bound(pats.begin(), pats.end(), m) - pats.begin());
    count[k] += 1.0;
  }

  std::vector<double> w(P, 0.0), w_prev(P, 0.0);
  std::vector<double> terms_a(R), terms_b(R), red;
  red.reserve(P);

  const auto expand_weights = [&](std::vector<double>& out) {
    out.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t k = static_cast<std::size_t>(
          std::lower_bound(pats.begin(), pats.end(), pattern[i]) - pats.begin());
      out[i] = w[k];
    }
  };

  for (int it = 1; it <= params.max_iters; ++it) {
    std::vector<double> log_p(R), log_1m_p(R), log_q(R), log_1m_q(R);
    for (int j = 0; j < R; ++j) {
      log_p[j] = std::log(result.p[j]);
      log_1m_p[j] = std::log(1.0 - result.p[j]);
      log_q[j] = std::log(result.q[j]);
      log_1m_q[j] = std::log(1.0 - result.q[j]);
    }

    for (std::size_t k = 0; k < P; ++k) {
      const std::uint64_t m = pats[k];
      for (int j = 0; j < R; ++j) {
        const bool d = (m >> j) & 1u;
        terms_a[j] = d ? log_p[j] : log_1m_p[j];
        terms_b[j] = d ? log_1m_q[j] : log_q[j];
      }
      const double log_a = log_gamma + sorted_sum(terms_a);
      const double log_b = log_1m_gamma + sorted_sum(terms_b);
      w[k] = 1.0 / (1.0 + std::exp(log_b - log_a));
    }

    result.iters = it;
    if (it > 1) {
      double delta = 0.0;
      for (std::size_t k = 0; k < P; ++k)
        delta = std::max(delta, std::fabs(w[k] - w_prev[k]));
      result.deltas.push_back(delta);
      if (delta < params.tol) {
        result.converged = true;
        if (params.record_trace) {
          StapleIterate snap;
          expand_weights(snap.weights);
          snap.p = result.p;
          snap.q = result.q;
          result.trace.push_back(std::move(snap));
        }
        break;
      }
    }
    w_prev = w;

    red.clear();
    for (std::size_t k = 0; k < P; ++k) red.push_back(count[k] * w[k]);
    const double den_p = sorted_sum(red);
    red.clear();
    for (std::size_t k = 0; k < P; ++k) red.push_back(count[k] * (1.0 - w[k]));
    const double den_q = sorted_sum(red);

    for (int j = 0; j < R; ++j) {
      red.clear();
      for (std::size_t k = 0; k < P; ++k)
        if ((pats[k] >> j) & 1u) red.push_back(count[k] * w[k]);
      if (den_p != 0.0) result.p[j] = clamp_param(sorted_sum(red) / den_p);
      red.clear();
      for (std::size_t k = 0; k < P; ++k)
        if (!((pats[k] >> j) & 1u)) red.push_back(count[k] * (1.0 - w[k]));
      if (den_q != 0.0) result.q[j] = clamp_param(sorted_sum(red) / den_q);
    }

    if (params.record_trace) {
      StapleIterate snap;
      expand_weights(snap.weights);
      snap.p = result.p;
      snap.q = result.q;
      result.trace.push_back(std::move(snap));
    }
  }

  result.consensus = make_volume(ref.dims, VoxelKind::Label);
  result.weights = make_volume(ref.dims, VoxelKind::Probability);
  result.consensus.spacing = result.weights.spacing = ref.spacing;
  result.consensus.origin = result.weights.origin = ref.origin;
  result.consensus.direction = result.weights.direction = ref.direction;
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t k = static_cast<std::size_t>(
        std::lower_bound(pats.begin(), pats.end(), pattern[i]) - pats.begin());
    const float wf = static_cast<float>(w[k]);
    result.weights.data[i] = wf;
    result.consensus.data[i] = wf >= 0.5f ? 1.0f : 0.0f;
  }
  return result;
}

Volume3 majority_vote(const RaterStack& stack) {
  check_stack(stack.masks);
  const int R = static_cast<int>(stack.masks.size());
  const int need = (R + 2) / 2;  // ceil((R+1)/2)

  Volume3 out = make_volume(stack.masks.front().dims, VoxelKind::Label);
  out.spacing = stack.masks.front().spacing;
  out.origin = stack.masks.front().origin;
  out.direction = stack.masks.front().direction;
  for (std::size_t i = 0; i < out.size(); ++i) {
    int votes = 0;
    for (const Volume3& m : stack.masks) votes += m.data[i] != 0.0f ? 1 : 0;
    out.data[i] = votes >= need ? 1.0f : 0.0f;
  }
  return out;
}

Volume3 mean_prob_fusion(const std::vector<Volume3>& maps, double threshold) {
  require(!maps.empty(), Errc::EmptyList, "no probability maps to fuse");
  const Volume3& ref = maps.front();
  for (const Volume3& m : maps)
    require(same_grid(m, ref), Errc::GridMismatch, "maps must share one grid");

  Volume3 out = make_volume(ref.dims, VoxelKind::Label);
  out.spacing = ref.spacing;
  out.origin = ref.origin;
  out.direction = ref.direction;
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (const Volume3& m : maps) acc += m.data[i];
    out.data[i] = acc * inv >= threshold ? 1.0f : 0.0f;
  }
  return out;
}

}  // namespace petfuse
