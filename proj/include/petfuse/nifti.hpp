#pragma once

#include <filesystem>
#include <optional>

#include "petfuse/volume.hpp"

namespace petfuse {

// Reads a scalar 3D NIfTI-1 file (.nii or .nii.gz, little-endian).
//
// Accepted on-disk datatypes: uint8, int16, int32, float32, float64; values
// are promoted to 32-bit reals, applying scl_slope/scl_inter when set.
// Orientation comes from the sform when sform_code > 0, else the qform, else
// identity. Spacing comes from pixdim.
//
// When `kind` is not given it is inferred: uint8 payloads whose values are all
// 0/1 become LABEL, everything else is tagged CT.
//
// Errors: MALFORMED_HEADER (bad magic, size or geometry fields),
//         UNSUPPORTED (non-3D, non-scalar or unknown datatype).
Volume3 read_nifti(const std::filesystem::path& path,
                   std::optional<VoxelKind> kind = std::nullopt);

// Writes NIfTI-1, gzip-compressed when the path ends in ".gz". LABEL volumes
// are stored as uint8, everything else as float32. Both sform and qform are
// written and consistent. Throws IO_FAILURE on filesystem errors and a
// precondition error when `vol` violates its invariants.
void write_nifti(const Volume3& vol, const std::filesystem::path& path);

}  // namespace petfuse
