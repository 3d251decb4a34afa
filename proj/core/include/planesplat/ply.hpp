#pragma once

#include <filesystem>

#include "planesplat/mesh.hpp"
#include "planesplat/splat.hpp"

namespace planesplat::io {

// Scene checkpoints are binary little-endian PLY with one vertex per Gaussian
// and double properties
//   x y z log_s1 log_s2 log_s3 qw qx qy qz opacity_logit r g b
// so a round trip is exact.
void write_scene_ply(const std::filesystem::path& path, const GaussianCloud& scene);
[[nodiscard]] GaussianCloud read_scene_ply(const std::filesystem::path& path);

/// Binary little-endian mesh: float x y z [nx ny nz] [uchar red green blue],
/// faces as uchar-counted int lists.
void write_mesh_ply(const std::filesystem::path& path, const Mesh& mesh);
/// Reads binary little-endian or ASCII PLY triangle meshes with float, double
/// or integer vertex properties.  Polygons are fan-triangulated.
[[nodiscard]] Mesh read_mesh_ply(const std::filesystem::path& path);

}  // namespace planesplat::io
