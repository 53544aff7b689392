#include "petfuse/predictor.hpp"

#include <sys/wait.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <vector>

#include "petfuse/error.hpp"
#include "petfuse/nifti.hpp"
#include "petfuse/rng.hpp"

namespace petfuse {

namespace {

std::vector<double> gaussian_taps(double sigma_vox, int& radius) {
  radius = static_cast<int>(std::ceil(3.0 * sigma_vox));
  std::vector<double> taps(static_cast<std::size_t>(radius) + 1);
  double sum = 0.0;
  for (int k = 0; k <= radius; ++k) {
    taps[k] = std::exp(-0.5 * (k / sigma_vox) * (k / sigma_vox));
    sum += (k == 0 ? taps[k] : 2.0 * taps[k]);
  }
  for (double& t : taps) t /= sum;
  return taps;
}

void smooth_axis(std::vector<float>& data, const Index3& dims, int axis,
                 double sigma_vox) {
  int radius = 0;
  const std::vector<double> taps = gaussian_taps(sigma_vox, radius);
  if (radius == 0) return;

  const int n = dims[axis];
  std::array<std::size_t, 3> stride = {
      1, static_cast<std::size_t>(dims[0]),
      static_cast<std::size_t>(dims[0]) * dims[1]};
  const std::size_t s = stride[axis];

  const int oa = axis == 0 ? 1 : 0;
  const int ob = axis == 2 ? 1 : 2;
  std::vector<float> line(static_cast<std::size_t>(n));
  for (int b = 0; b < dims[ob]; ++b) {
    for (int a = 0; a < dims[oa]; ++a) {
      Index3 idx{0, 0, 0};
      idx[oa] = a;
      idx[ob] = b;
      const std::size_t base = static_cast<std::size_t>(idx[0]) +
                               stride[1] * idx[1] + stride[2] * idx[2];
      for (int j = 0; j < n; ++j) line[j] = data[base + s * j];
      for (int j = 0; j < n; ++j) {
        // Pairing the two taps equidistant from j keeps the sum identical
        // under axis reversal.
        double acc = taps[0] * line[j];
        for (int k = 1; k <= radius; ++k) {
          const int lo = std::max(j - k, 0);
          const int hi = std::min(j + k, n - 1);
          acc += taps[k] * (static_cast<double>(line[lo]) + line[hi]);
        }
        data[base + s * j] = static_cast<float>(acc);
      }
    }
  }
}

void clamp_unit(Volume3& vol) {
  for (float& v : vol.data) v = std::min(1.0f, std::max(0.0f, v));
}

Volume3 predict_threshold(const PredictorBinding& binding, const Volume3& pet_patch) {
  Volume3 out = pet_patch;
  out.kind = VoxelKind::Probability;
  for (float& v : out.data) {
    const double z = (static_cast<double>(v) - binding.threshold_t) / 0.5;
    v = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
  }
  out = gaussian_smooth(out, binding.smooth_sigma_mm);
  clamp_unit(out);
  return out;
}

Volume3 predict_oracle(const PredictorBinding& binding, const Volume3& pet_patch,
                       const PatchContext& ctx) {
  require(ctx.gt_patch != nullptr, Errc::Precondition,
          "ORACLE predictor needs a ground-truth patch");
  require(ctx.gt_patch->dims == pet_patch.dims, Errc::DimsMismatch,
          "ground-truth patch dims differ from the input patch");
  require(binding.noise_amp >= 0.0 && binding.noise_amp < 0.5, Errc::Precondition,
          "noise_amp must lie in [0, 0.5)");

  Volume3 out = *ctx.gt_patch;
  out.kind = VoxelKind::Probability;
  out = gaussian_smooth(out, binding.smooth_sigma_mm);
  if (binding.noise_amp > 0.0) {
    NoiseStream stream(mix_keys(binding.seed, ctx.noise_key));
    for (float& v : out.data) {
      const double noise = (2.0 * stream.next_unit() - 1.0) * binding.noise_amp;
      v = static_cast<float>(static_cast<double>(v) + noise);
    }
  }
  clamp_unit(out);
  return out;
}

std::string next_exchange_id(std::uint64_t noise_key) {
  static std::atomic<std::uint64_t> counter{0};
  const std::uint64_t id = mix_keys(noise_key, counter.fetch_add(1) + 1);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(id));
  return buf;
}

Volume3 predict_external(const PredictorBinding& binding, const Volume3& ct_patch,
                         const Volume3& pet_patch, const PatchContext& ctx) {
  require(!binding.command.empty(), Errc::Precondition,
          "EXTERNAL predictor needs a command");
  namespace fs = std::filesystem;
  const fs::path workdir = binding.workdir.empty() ? fs::path(".") : fs::path(binding.workdir);
  const std::string uuid = next_exchange_id(ctx.noise_key);
  const fs::path ct_path = workdir / (uuid + "_ct.nii.gz");
  const fs::path pet_path = workdir / (uuid + "_pet.nii.gz");
  const fs::path prob_path = workdir / (uuid + "_prob.nii.gz");

  auto cleanup = [&] {
    std::error_code ec;
    fs::remove(ct_path, ec);
    fs::remove(pet_path, ec);
    fs::remove(prob_path, ec);
  };

  try {
    write_nifti(ct_patch, ct_path.string());
    write_nifti(pet_patch, pet_path.string());

    const std::string cmd =
        binding.command + " '" + uuid + "' '" + workdir.string() + "'";
    const int status = std::system(cmd.c_str());
    if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      cleanup();
      fail(Errc::ExternalFailure, "external predictor exited with failure");
    }

    Volume3 prob;
    try {
      prob = read_nifti(prob_path.string(), VoxelKind::CT);
    } catch (const Error&) {
      cleanup();
      fail(Errc::ExternalFailure, "external predictor reply is unreadable");
    }
    cleanup();
    if (prob.dims != pet_patch.dims) {
      fail(Errc::ExternalFailure, "external predictor reply has wrong dims");
    }
    for (float& v : prob.data) {
      if (!std::isfinite(v)) {
        fail(Errc::ExternalFailure, "external predictor reply is not finite");
      }
      v = std::min(1.0f, std::max(0.0f, v));
    }
    prob.kind = VoxelKind::Probability;
    return prob;
  } catch (...) {
    cleanup();
    throw;
  }
}

}  // namespace

const char* predictor_kind_name(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::Threshold: return "THRESHOLD";
    case PredictorKind::Oracle: return "ORACLE";
    case PredictorKind::External: return "EXTERNAL";
  }
  return "?";
}

Volume3 gaussian_smooth(const Volume3& vol, double sigma_mm) {
  require(sigma_mm >= 0.0, Errc::Precondition, "sigma_mm must be nonnegative");
  Volume3 out = vol;
  if (sigma_mm == 0.0) return out;
  for (int axis = 0; axis < 3; ++axis) {
    const double sigma_vox = sigma_mm / vol.spacing[axis];
    smooth_axis(out.data, out.dims, axis, sigma_vox);
  }
  return out;
}

Volume3 predict(const PredictorBinding& binding, const Volume3& ct_patch,
                const Volume3& pet_patch, const PatchContext& ctx) {
  require(ct_patch.dims == pet_patch.dims && ct_patch.spacing == pet_patch.spacing,
          Errc::DimsMismatch, "CT and PET patches must share dims and spacing");
  switch (binding.kind) {
    case PredictorKind::Threshold:
      return predict_threshold(binding, pet_patch);
    case PredictorKind::Oracle:
      return predict_oracle(binding, pet_patch, ctx);
    case PredictorKind::External:
      return predict_external(binding, ct_patch, pet_patch, ctx);
  }
  fail(Errc::Precondition, "unknown predictor kind");
}

}  // namespace petfuse
