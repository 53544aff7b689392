#include "petfuse/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace petfuse {

namespace {

std::vector<Index3> neighbor_offsets(int connectivity) {
  std::vector<Index3> offsets;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (connectivity == 6 && manhattan != 1) continue;
        offsets.push_back({dx, dy, dz});
      }
    }
  }
  return offsets;
}

// Flood-fill labeling; returns the flat indices of the largest component.
// Ties resolve to the component found first in scan order.
std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& fg,
                                            const Index3& dims, int connectivity) {
  const std::size_t n = fg.size();
  const auto offsets = neighbor_offsets(connectivity);
  std::vector<std::int32_t> label(n, -1);
  std::int32_t next_label = 0;
  std::int64_t best_size = 0;
  std::int32_t best_label = -1;
  std::vector<std::size_t> stack;

  const auto flat = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  };

  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!fg[seed] || label[seed] >= 0) continue;
    const std::int32_t id = next_label++;
    std::int64_t size = 0;
    label[seed] = id;
    stack.assign(1, seed);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      ++size;
      const int x = static_cast<int>(cur % dims[0]);
      const int y = static_cast<int>((cur / dims[0]) % dims[1]);
      const int z = static_cast<int>(cur / (static_cast<std::size_t>(dims[0]) * dims[1]));
      for (const auto& o : offsets) {
        const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
        if (nx < 0 || nx >= dims[0] || ny < 0 || ny >= dims[1] || nz < 0 || nz >= dims[2]) {
          continue;
        }
        const std::size_t ni = flat(nx, ny, nz);
        if (fg[ni] && label[ni] < 0) {
          label[ni] = id;
          stack.push_back(ni);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = id;
    }
  }

  std::vector<std::uint8_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) out[i] = label[i] == best_label ? 1 : 0;
  return out;
}

std::vector<Index3> ball_offsets(const Index3& radii) {
  std::vector<Index3> offsets;
  for (int dz = -radii[2]; dz <= radii[2]; ++dz) {
    for (int dy = -radii[1]; dy <= radii[1]; ++dy) {
      for (int dx = -radii[0]; dx <= radii[0]; ++dx) {
        double r2 = 0.0;
        const int d[3] = {dx, dy, dz};
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
          if (radii[a] == 0) {
            if (d[a] != 0) inside = false;
          } else {
            const double t = static_cast<double>(d[a]) / radii[a];
            r2 += t * t;
          }
        }
        if (inside && r2 <= 1.0) offsets.push_back({dx, dy, dz});
      }
    }
  }
  return offsets;
}

std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& in, const Index3& dims,
                                 const std::vector<Index3>& se) {
  std::vector<std::uint8_t> out(in.size(), 0);
  std::size_t i = 0;
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x, ++i) {
        for (const auto& o : se) {
          const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
          if (nx < 0 || nx >= dims[0] || ny < 0 || ny >= dims[1] || nz < 0 || nz >= dims[2]) {
            continue;
          }
          if (in[static_cast<std::size_t>(nx) +
                 static_cast<std::size_t>(dims[0]) *
                     (static_cast<std::size_t>(ny) + static_cast<std::size_t>(dims[1]) * nz)]) {
            out[i] = 1;
            break;
          }
        }
      }
    }
  }
  return out;
}

// Out-of-grid voxels count as foreground here so that closing never erodes the
// mask at the image border.
std::vector<std::uint8_t> erode(const std::vector<std::uint8_t>& in, const Index3& dims,
                                const std::vector<Index3>& se) {
  std::vector<std::uint8_t> out(in.size(), 0);
  std::size_t i = 0;
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x, ++i) {
        bool all = true;
        for (const auto& o : se) {
          const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
          if (nx < 0 || nx >= dims[0] || ny < 0 || ny >= dims[1] || nz < 0 || nz >= dims[2]) {
            continue;
          }
          if (!in[static_cast<std::size_t>(nx) +
                  static_cast<std::size_t>(dims[0]) *
                      (static_cast<std::size_t>(ny) + static_cast<std::size_t>(dims[1]) * nz)]) {
            all = false;
            break;
          }
        }
        out[i] = all ? 1 : 0;
      }
    }
  }
  return out;
}

double pad_value_for(const Volume3& vol, const CropSpec& spec) {
  switch (vol.kind) {
    case VoxelKind::CT: return spec.pad_value_ct;
    case VoxelKind::PET: return spec.pad_value_pet;
    default: return 0.0;
  }
}

}  // namespace

GridRef grid_of(const Volume3& vol) {
  return GridRef{vol.dims, vol.spacing, vol.origin, vol.direction};
}

Volume3 extract_body_mask(const Volume3& ct, const BodyMaskParams& params) {
  require(ct.kind == VoxelKind::CT, Errc::Precondition, "extract_body_mask expects a CT volume");
  require(params.connectivity == 6 || params.connectivity == 26, Errc::Precondition,
          "connectivity must be 6 or 26");
  require(params.closing_radius_mm >= 0.0, Errc::Precondition, "closing radius must be >= 0");

  const std::size_t n = ct.size();
  std::vector<std::uint8_t> fg(n, 0);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (ct.data[i] > params.hu_threshold) {
      fg[i] = 1;
      any = true;
    }
  }
  require(any, Errc::EmptyMask, "no voxel exceeds the HU threshold");

  fg = largest_component(fg, ct.dims, params.connectivity);

  Index3 radii{0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    radii[a] = std::max<int>(0, static_cast<int>(std::lround(params.closing_radius_mm / ct.spacing[a])));
  }
  if (radii[0] > 0 || radii[1] > 0 || radii[2] > 0) {
    const auto se = ball_offsets(radii);
    fg = erode(dilate(fg, ct.dims, se), ct.dims, se);
  }

  Volume3 mask = make_volume(ct.dims, VoxelKind::Label);
  mask.spacing = ct.spacing;
  mask.origin = ct.origin;
  mask.direction = ct.direction;
  for (std::size_t i = 0; i < n; ++i) mask.data[i] = fg[i] ? 1.0f : 0.0f;
  return mask;
}

BoundingBox compute_bbox(const Volume3& mask, double margin_mm) {
  require(margin_mm >= 0.0, Errc::Precondition, "margin must be >= 0");
  Index3 lo{mask.dims[0], mask.dims[1], mask.dims[2]};
  Index3 hi{-1, -1, -1};
  std::size_t i = 0;
  for (int z = 0; z < mask.dims[2]; ++z) {
    for (int y = 0; y < mask.dims[1]; ++y) {
      for (int x = 0; x < mask.dims[0]; ++x, ++i) {
        if (mask.data[i] == 0.0f) continue;
        lo[0] = std::min(lo[0], x);
        lo[1] = std::min(lo[1], y);
        lo[2] = std::min(lo[2], z);
        hi[0] = std::max(hi[0], x);
        hi[1] = std::max(hi[1], y);
        hi[2] = std::max(hi[2], z);
      }
    }
  }
  require(hi[0] >= 0, Errc::EmptyMask, "mask has no foreground voxel");

  BoundingBox box;
  for (int a = 0; a < 3; ++a) {
    const int dilation = static_cast<int>(std::ceil(margin_mm / mask.spacing[a]));
    box.lo[a] = std::max(0, lo[a] - dilation);
    box.hi[a] = std::min(mask.dims[a], hi[a] + 1 + dilation);
  }
  return box;
}

Volume3 crop_with_padding(const Volume3& vol, const CropSpec& spec) {
  const BoundingBox& box = spec.bbox;
  for (int a = 0; a < 3; ++a) {
    require(box.extent(a) > 0, Errc::DegenerateBox, "crop box is empty along an axis");
  }

  const float pad = static_cast<float>(pad_value_for(vol, spec));
  Volume3 out;
  out.dims = {box.extent(0), box.extent(1), box.extent(2)};
  out.spacing = vol.spacing;
  out.direction = vol.direction;
  out.kind = vol.kind;
  out.data.assign(out.size(), pad);

  // New origin is the world position of the (possibly virtual) voxel at lo.
  const Real3 shift{box.lo[0] * vol.spacing[0], box.lo[1] * vol.spacing[1],
                    box.lo[2] * vol.spacing[2]};
  for (int r = 0; r < 3; ++r) {
    out.origin[r] = vol.origin[r] + vol.direction[r * 3 + 0] * shift[0] +
                    vol.direction[r * 3 + 1] * shift[1] + vol.direction[r * 3 + 2] * shift[2];
  }

  // x runs are contiguous in both grids.
  const int x_src_begin = std::max(box.lo[0], 0);
  const int x_src_end = std::min(box.hi[0], vol.dims[0]);
  if (x_src_begin >= x_src_end) return out;
  const int x_out_offset = x_src_begin - box.lo[0];
  const std::size_t run = static_cast<std::size_t>(x_src_end - x_src_begin);

  for (int zo = 0; zo < out.dims[2]; ++zo) {
    const int zi = zo + box.lo[2];
    if (zi < 0 || zi >= vol.dims[2]) continue;
    for (int yo = 0; yo < out.dims[1]; ++yo) {
      const int yi = yo + box.lo[1];
      if (yi < 0 || yi >= vol.dims[1]) continue;
      std::memcpy(&out.data[out.index(x_out_offset, yo, zo)],
                  &vol.data[vol.index(x_src_begin, yi, zi)], run * sizeof(float));
    }
  }
  return out;
}

Volume3 resample_like(const Volume3& vol, const GridRef& target, Interp mode,
                      OutOfSupport policy, double fill) {
  require(!(vol.kind == VoxelKind::Label && mode == Interp::Trilinear), Errc::BadMode,
          "LABEL volumes must be resampled with NEAREST");

  Volume3 out;
  out.dims = target.dims;
  out.spacing = target.spacing;
  out.origin = target.origin;
  out.direction = target.direction;
  out.kind = vol.kind;
  out.data.resize(out.size());

  // Continuous source-voxel coordinates of an output voxel j:
  //   u = Dv^T (o_t + D_t (j .* s_t) - o_v) ./ s_v
  // which is affine in j; precompute the base point and the per-axis steps.
  Real3 base;
  {
    const Real3 d{target.origin[0] - vol.origin[0], target.origin[1] - vol.origin[1],
                  target.origin[2] - vol.origin[2]};
    for (int c = 0; c < 3; ++c) {
      base[c] = (vol.direction[c] * d[0] + vol.direction[3 + c] * d[1] +
                 vol.direction[6 + c] * d[2]) /
                vol.spacing[c];
    }
  }
  // step[j_axis][src_axis]
  double step[3][3];
  for (int ja = 0; ja < 3; ++ja) {
    for (int c = 0; c < 3; ++c) {
      const double dot = vol.direction[c] * target.direction[ja] +
                         vol.direction[3 + c] * target.direction[3 + ja] +
                         vol.direction[6 + c] * target.direction[6 + ja];
      step[ja][c] = dot * target.spacing[ja] / vol.spacing[c];
    }
  }

  const auto sample_nearest = [&](const Real3& u) -> float {
    Index3 idx;
    for (int a = 0; a < 3; ++a) {
      long r = std::lround(u[a]);
      if (policy == OutOfSupport::Constant && (r < 0 || r >= vol.dims[a])) {
        return static_cast<float>(fill);
      }
      idx[a] = static_cast<int>(std::clamp<long>(r, 0, vol.dims[a] - 1));
    }
    return vol.data[vol.index(idx[0], idx[1], idx[2])];
  };

  const auto sample_trilinear = [&](const Real3& u) -> float {
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
      double ua = u[a];
      if (policy == OutOfSupport::Constant && (ua < 0.0 || ua > vol.dims[a] - 1)) {
        return static_cast<float>(fill);
      }
      ua = std::clamp(ua, 0.0, static_cast<double>(vol.dims[a] - 1));
      if (vol.dims[a] == 1) {
        i0[a] = 0;
        f[a] = 0.0;
      } else {
        i0[a] = std::min(static_cast<int>(ua), vol.dims[a] - 2);
        f[a] = ua - i0[a];
      }
    }
    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz) {
      const int z = std::min(i0[2] + dz, vol.dims[2] - 1);
      const double wz = dz ? f[2] : 1.0 - f[2];
      if (wz == 0.0) continue;
      for (int dy = 0; dy <= 1; ++dy) {
        const int y = std::min(i0[1] + dy, vol.dims[1] - 1);
        const double wy = dy ? f[1] : 1.0 - f[1];
        if (wy == 0.0) continue;
        for (int dx = 0; dx <= 1; ++dx) {
          const int x = std::min(i0[0] + dx, vol.dims[0] - 1);
          const double wx = dx ? f[0] : 1.0 - f[0];
          if (wx == 0.0) continue;
          acc += wz * wy * wx * vol.data[vol.index(x, y, z)];
        }
      }
    }
    return static_cast<float>(acc);
  };

  std::size_t i = 0;
  for (int z = 0; z < out.dims[2]; ++z) {
    for (int y = 0; y < out.dims[1]; ++y) {
      Real3 row{base[0] + y * step[1][0] + z * step[2][0],
                base[1] + y * step[1][1] + z * step[2][1],
                base[2] + y * step[1][2] + z * step[2][2]};
      for (int x = 0; x < out.dims[0]; ++x, ++i) {
        const Real3 u{row[0] + x * step[0][0], row[1] + x * step[0][1],
                      row[2] + x * step[0][2]};
        out.data[i] = mode == Interp::Nearest ? sample_nearest(u) : sample_trilinear(u);
      }
    }
  }
  return out;
}

Volume3 resample(const Volume3& vol, const Real3& target_spacing, Interp mode) {
  for (int a = 0; a < 3; ++a) {
    require(target_spacing[a] > 0.0, Errc::Precondition, "target spacing must be > 0");
  }
  require(!(vol.kind == VoxelKind::Label && mode == Interp::Trilinear), Errc::BadMode,
          "LABEL volumes must be resampled with NEAREST");

  if (target_spacing == vol.spacing) return vol;  // bit-exact identity

  GridRef target;
  target.spacing = target_spacing;
  target.direction = vol.direction;
  Real3 center_voxel_shift;  // (in-center voxel) minus (out-center voxel), world mm
  for (int a = 0; a < 3; ++a) {
    target.dims[a] = std::max<int>(
        1, static_cast<int>(std::lround(vol.dims[a] * vol.spacing[a] / target_spacing[a])));
    center_voxel_shift[a] =
        (vol.dims[a] - 1) * 0.5 * vol.spacing[a] - (target.dims[a] - 1) * 0.5 * target_spacing[a];
  }
  for (int r = 0; r < 3; ++r) {
    target.origin[r] = vol.origin[r] + vol.direction[r * 3 + 0] * center_voxel_shift[0] +
                       vol.direction[r * 3 + 1] * center_voxel_shift[1] +
                       vol.direction[r * 3 + 2] * center_voxel_shift[2];
  }
  return resample_like(vol, target, mode, OutOfSupport::Clamp);
}

Volume3 normalize_ct(const Volume3& vol, const NormalizationStats& stats) {
  require(vol.kind == VoxelKind::CT, Errc::Precondition, "normalize_ct expects a CT volume");
  require(stats.clip_lo < stats.clip_hi, Errc::Precondition, "clip_lo must be < clip_hi");
  require(stats.std > 0.0, Errc::Precondition, "std must be > 0");

  Volume3 out = vol;
  for (float& v : out.data) {
    const double clamped = std::clamp(static_cast<double>(v), stats.clip_lo, stats.clip_hi);
    v = static_cast<float>((clamped - stats.mean) / stats.std);
  }
  return out;
}

Volume3 normalize_pet(const Volume3& vol, double* mean_out, double* std_out) {
  require(vol.kind == VoxelKind::PET, Errc::Precondition, "normalize_pet expects a PET volume");

  const std::size_t n = vol.size();
  double sum = 0.0;
  for (float v : vol.data) sum += v;
  const double mean = sum / static_cast<double>(n);
  double var = 0.0;
  for (float v : vol.data) {
    const double d = v - mean;
    var += d * d;
  }
  const double sd = std::sqrt(var / static_cast<double>(n));
  const double denom = std::max(sd, 1e-8);
  if (mean_out != nullptr) *mean_out = mean;
  if (std_out != nullptr) *std_out = denom;

  Volume3 out = vol;
  for (float& v : out.data) v = static_cast<float>((v - mean) / denom);
  return out;
}

}  // namespace petfuse
