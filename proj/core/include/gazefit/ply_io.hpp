#pragma once

#include <filesystem>

#include "gazefit/pointcloud.hpp"

namespace gazefit {

/// Reads an ASCII PLY point cloud: element `vertex` with properties x y z and
/// optionally nx ny nz. Unknown properties and non-vertex elements are
/// tolerated and skipped. Malformed headers or truncated bodies raise
/// ParseError with a line diagnostic; filesystem failures raise IoError.
PointSet load_ply(const std::filesystem::path& path);

/// Writes an ASCII PLY with x y z (and nx ny nz when normals are present),
/// full round-trip precision.
void save_ply(const PointSet& cloud, const std::filesystem::path& path);

} // namespace gazefit
