#include "petfuse/metrics.hpp"

#include "petfuse/error.hpp"

namespace petfuse {

CaseMetrics evaluate_masks(const Volume3& pred, const Volume3& gt) {
  require(same_grid(pred, gt), Errc::GridMismatch,
          "prediction and ground truth must share one grid");

  CaseMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] != 0.0f;
    const bool g = gt.data[i] != 0.0f;
    if (p && g)
      ++m.tp;
    else if (p)
      ++m.fp;
    else if (g)
      ++m.fn;
    else
      ++m.tn;
  }

  const double denom = static_cast<double>(2 * m.tp + m.fp + m.fn);
  m.dice = denom > 0.0 ? 2.0 * static_cast<double>(m.tp) / denom : 1.0;
  const double voxel_ml =
      pred.spacing[0] * pred.spacing[1] * pred.spacing[2] / 1000.0;
  m.fp_volume_ml = static_cast<double>(m.fp) * voxel_ml;
  m.fn_volume_ml = static_cast<double>(m.fn) * voxel_ml;
  return m;
}

double dice(const Volume3& pred, const Volume3& gt) {
  return evaluate_masks(pred, gt).dice;
}

}  // namespace petfuse
