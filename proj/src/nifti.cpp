#include "petfuse/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "petfuse/version.hpp"

namespace petfuse {

namespace {

static_assert(std::endian::native == std::endian::little,
              "NIfTI i/o assumes a little-endian host");

// On-disk NIfTI-1 header. The field layout packs to exactly 348 bytes with
// natural alignment; the static_assert below guards against a compiler that
// disagrees.
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1;
  float intent_p2;
  float intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax;
  std::int32_t glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b;
  float quatern_c;
  float quatern_d;
  float qoffset_x;
  float qoffset_y;
  float qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348, "nifti-1 header must pack to 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kDtUint8: return 1;
    case kDtInt16: return 2;
    case kDtInt32: return 4;
    case kDtFloat32: return 4;
    case kDtFloat64: return 8;
    default: return 0;
  }
}

// gzread handles both gzip streams and plain files, so the read path does not
// care about the extension.
std::vector<char> read_all_bytes(const std::filesystem::path& path) {
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) fail(Errc::IoFailure, "cannot open " + path.string());
  std::vector<char> bytes;
  char chunk[1 << 16];
  int got = 0;
  while ((got = gzread(file, chunk, sizeof(chunk))) > 0) {
    bytes.insert(bytes.end(), chunk, chunk + got);
  }
  const bool bad = got < 0;
  gzclose(file);
  if (bad) fail(Errc::IoFailure, "decompression failed for " + path.string());
  return bytes;
}

Mat3 direction_from_quaternion(double b, double c, double d, double qfac) {
  const double rest = 1.0 - b * b - c * c - d * d;
  const double a = rest > 0.0 ? std::sqrt(rest) : 0.0;
  Mat3 m{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
         2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
         2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c};
  if (qfac < 0.0) {
    m[2] = -m[2];
    m[5] = -m[5];
    m[8] = -m[8];
  }
  return m;
}

// Rotation -> quaternion (b, c, d with a >= 0), the standard NIfTI recipe.
void quaternion_from_direction(const Mat3& r, float& qb, float& qc, float& qd) {
  double a = r[0] + r[4] + r[8] + 1.0;
  double b, c, d;
  if (a > 0.5) {
    a = 0.5 * std::sqrt(a);
    b = 0.25 * (r[7] - r[5]) / a;
    c = 0.25 * (r[2] - r[6]) / a;
    d = 0.25 * (r[3] - r[1]) / a;
  } else {
    const double xd = 1.0 + r[0] - r[4] - r[8];
    const double yd = 1.0 + r[4] - r[0] - r[8];
    const double zd = 1.0 + r[8] - r[0] - r[4];
    if (xd > 1.0) {
      b = 0.5 * std::sqrt(xd);
      c = 0.25 * (r[1] + r[3]) / b;
      d = 0.25 * (r[2] + r[6]) / b;
      a = 0.25 * (r[7] - r[5]) / b;
    } else if (yd > 1.0) {
      c = 0.5 * std::sqrt(yd);
      b = 0.25 * (r[1] + r[3]) / c;
      d = 0.25 * (r[5] + r[7]) / c;
      a = 0.25 * (r[2] - r[6]) / c;
    } else {
      d = 0.5 * std::sqrt(zd);
      b = 0.25 * (r[2] + r[6]) / d;
      c = 0.25 * (r[5] + r[7]) / d;
      a = 0.25 * (r[3] - r[1]) / d;
    }
    if (a < 0.0) {
      b = -b;
      c = -c;
      d = -d;
    }
  }
  qb = static_cast<float>(b);
  qc = static_cast<float>(c);
  qd = static_cast<float>(d);
}

void normalize_columns(Mat3& m) {
  for (int c = 0; c < 3; ++c) {
    const double norm = std::sqrt(m[c] * m[c] + m[3 + c] * m[3 + c] + m[6 + c] * m[6 + c]);
    require(norm > 1e-12, Errc::MalformedHeader, "orientation column has zero length");
    m[c] /= norm;
    m[3 + c] /= norm;
    m[6 + c] /= norm;
  }
}

void check_orthonormal(const Mat3& m) {
  for (int c0 = 0; c0 < 3; ++c0) {
    for (int c1 = c0 + 1; c1 < 3; ++c1) {
      const double dot = m[c0] * m[c1] + m[3 + c0] * m[3 + c1] + m[6 + c0] * m[6 + c1];
      require(std::abs(dot) <= 1e-4, Errc::Unsupported,
              "sheared (non-orthonormal) orientation matrices are not supported");
    }
  }
}

double det3(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

}  // namespace

Volume3 read_nifti(const std::filesystem::path& path, std::optional<VoxelKind> kind) {
  const std::vector<char> bytes = read_all_bytes(path);
  require(bytes.size() >= sizeof(Nifti1Header), Errc::MalformedHeader,
          path.string() + ": file shorter than a nifti-1 header");

  Nifti1Header hdr;
  std::memcpy(&hdr, bytes.data(), sizeof(hdr));

  if (hdr.sizeof_hdr != 348) {
    if (__builtin_bswap32(static_cast<std::uint32_t>(hdr.sizeof_hdr)) == 348u) {
      fail(Errc::Unsupported, path.string() + ": big-endian files are not supported");
    }
    fail(Errc::MalformedHeader, path.string() + ": sizeof_hdr != 348");
  }
  require(std::memcmp(hdr.magic, "n+1\0", 4) == 0, Errc::MalformedHeader,
          path.string() + ": bad magic (expected single-file n+1)");
  require(hdr.dim[0] >= 1 && hdr.dim[0] <= 7, Errc::MalformedHeader,
          path.string() + ": dim[0] out of range");
  require(hdr.dim[0] == 3, Errc::Unsupported,
          path.string() + ": only scalar 3D volumes are supported (dim[0] = " +
              std::to_string(hdr.dim[0]) + ")");

  const int bpv = bytes_per_voxel(hdr.datatype);
  require(bpv > 0, Errc::Unsupported,
          path.string() + ": unsupported datatype code " + std::to_string(hdr.datatype));
  require(hdr.bitpix == bpv * 8, Errc::MalformedHeader,
          path.string() + ": bitpix inconsistent with datatype");

  Volume3 vol;
  for (int a = 0; a < 3; ++a) {
    require(hdr.dim[1 + a] >= 1, Errc::MalformedHeader, path.string() + ": non-positive dim");
    require(hdr.pixdim[1 + a] > 0.0f, Errc::MalformedHeader,
            path.string() + ": non-positive pixdim");
    vol.dims[a] = hdr.dim[1 + a];
    vol.spacing[a] = hdr.pixdim[1 + a];
  }

  if (hdr.sform_code > 0) {
    const float* rows[3] = {hdr.srow_x, hdr.srow_y, hdr.srow_z};
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r * 3 + c] = rows[r][c];
      vol.origin[r] = rows[r][3];
    }
    normalize_columns(m);
    check_orthonormal(m);
    vol.direction = m;
  } else if (hdr.qform_code > 0) {
    const double qfac = hdr.pixdim[0] < 0.0f ? -1.0 : 1.0;
    vol.direction = direction_from_quaternion(hdr.quatern_b, hdr.quatern_c, hdr.quatern_d, qfac);
    normalize_columns(vol.direction);
    vol.origin = {hdr.qoffset_x, hdr.qoffset_y, hdr.qoffset_z};
  }
  // else: identity direction, zero origin.

  const std::size_t nvox = vol.size();
  const std::size_t offset = static_cast<std::size_t>(hdr.vox_offset);
  require(hdr.vox_offset >= 348.0f, Errc::MalformedHeader, path.string() + ": vox_offset < 348");
  require(bytes.size() >= offset + nvox * static_cast<std::size_t>(bpv), Errc::MalformedHeader,
          path.string() + ": truncated data section");

  vol.data.resize(nvox);
  const char* src = bytes.data() + offset;
  switch (hdr.datatype) {
    case kDtUint8: {
      const auto* p = reinterpret_cast<const std::uint8_t*>(src);
      for (std::size_t i = 0; i < nvox; ++i) vol.data[i] = static_cast<float>(p[i]);
      break;
    }
    case kDtInt16: {
      std::vector<std::int16_t> tmp(nvox);
      std::memcpy(tmp.data(), src, nvox * 2);
      for (std::size_t i = 0; i < nvox; ++i) vol.data[i] = static_cast<float>(tmp[i]);
      break;
    }
    case kDtInt32: {
      std::vector<std::int32_t> tmp(nvox);
      std::memcpy(tmp.data(), src, nvox * 4);
      for (std::size_t i = 0; i < nvox; ++i) vol.data[i] = static_cast<float>(tmp[i]);
      break;
    }
    case kDtFloat32: {
      std::memcpy(vol.data.data(), src, nvox * 4);
      break;
    }
    case kDtFloat64: {
      std::vector<double> tmp(nvox);
      std::memcpy(tmp.data(), src, nvox * 8);
      for (std::size_t i = 0; i < nvox; ++i) vol.data[i] = static_cast<float>(tmp[i]);
      break;
    }
  }

  const float slope = hdr.scl_slope;
  const float inter = hdr.scl_inter;
  if (slope != 0.0f && !(slope == 1.0f && inter == 0.0f)) {
    for (float& v : vol.data) v = v * slope + inter;
  }

  if (kind.has_value()) {
    vol.kind = *kind;
  } else if (hdr.datatype == kDtUint8) {
    bool binary = true;
    for (float v : vol.data) {
      if (v != 0.0f && v != 1.0f) {
        binary = false;
        break;
      }
    }
    vol.kind = binary ? VoxelKind::Label : VoxelKind::CT;
  } else {
    vol.kind = VoxelKind::CT;
  }

  validate(vol);
  return vol;
}

void write_nifti(const Volume3& vol, const std::filesystem::path& path) {
  validate(vol);

  Nifti1Header hdr;
  std::memset(&hdr, 0, sizeof(hdr));
  hdr.sizeof_hdr = 348;
  hdr.regular = 'r';
  hdr.dim[0] = 3;
  for (int a = 0; a < 3; ++a) hdr.dim[1 + a] = static_cast<std::int16_t>(vol.dims[a]);
  for (int a = 4; a < 8; ++a) hdr.dim[a] = 1;

  const bool label = vol.kind == VoxelKind::Label;
  hdr.datatype = label ? kDtUint8 : kDtFloat32;
  hdr.bitpix = label ? 8 : 32;

  const double qfac = det3(vol.direction) < 0.0 ? -1.0 : 1.0;
  hdr.pixdim[0] = static_cast<float>(qfac);
  for (int a = 0; a < 3; ++a) hdr.pixdim[1 + a] = static_cast<float>(vol.spacing[a]);
  hdr.vox_offset = 352.0f;
  hdr.scl_slope = 1.0f;
  hdr.scl_inter = 0.0f;
  hdr.xyzt_units = 2;  // millimetres
  std::snprintf(hdr.descrip, sizeof(hdr.descrip), "petfuse %s", kEngineVersion);

  hdr.qform_code = 1;
  hdr.sform_code = 1;
  Mat3 proper = vol.direction;
  if (qfac < 0.0) {
    proper[2] = -proper[2];
    proper[5] = -proper[5];
    proper[8] = -proper[8];
  }
  quaternion_from_direction(proper, hdr.quatern_b, hdr.quatern_c, hdr.quatern_d);
  hdr.qoffset_x = static_cast<float>(vol.origin[0]);
  hdr.qoffset_y = static_cast<float>(vol.origin[1]);
  hdr.qoffset_z = static_cast<float>(vol.origin[2]);

  float* rows[3] = {hdr.srow_x, hdr.srow_y, hdr.srow_z};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      rows[r][c] = static_cast<float>(vol.direction[r * 3 + c] * vol.spacing[c]);
    }
    rows[r][3] = static_cast<float>(vol.origin[r]);
  }
  std::memcpy(hdr.magic, "n+1\0", 4);

  const std::size_t nvox = vol.size();
  std::vector<char> payload;
  if (label) {
    payload.resize(nvox);
    for (std::size_t i = 0; i < nvox; ++i) {
      payload[i] = static_cast<char>(static_cast<std::uint8_t>(vol.data[i]));
    }
  } else {
    payload.resize(nvox * 4);
    std::memcpy(payload.data(), vol.data.data(), payload.size());
  }

  const char pad[4] = {0, 0, 0, 0};  // no header extensions
  const std::string name = path.string();
  const bool gz = name.size() > 3 && name.compare(name.size() - 3, 3, ".gz") == 0;
  if (gz) {
    gzFile file = gzopen(name.c_str(), "wb");
    if (file == nullptr) fail(Errc::IoFailure, "cannot open " + name + " for writing");
    const bool ok =
        gzwrite(file, &hdr, sizeof(hdr)) == static_cast<int>(sizeof(hdr)) &&
        gzwrite(file, pad, 4) == 4 &&
        (payload.empty() ||
         gzwrite(file, payload.data(), static_cast<unsigned>(payload.size())) ==
             static_cast<int>(payload.size()));
    const bool closed = gzclose(file) == Z_OK;
    if (!ok || !closed) fail(Errc::IoFailure, "write failed for " + name);
  } else {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoFailure, "cannot open " + name + " for writing");
    out.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
    out.write(pad, 4);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) fail(Errc::IoFailure, "write failed for " + name);
  }
}

}  // namespace petfuse
