#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "planesplat/geometry.hpp"
#include "planesplat/raster.hpp"

namespace planesplat::io {

// PFM: little-endian float32 (scale -1.0), rows stored bottom to top.
// NaN pixels are written as NaN.
[[nodiscard]] ScalarMap read_pfm_scalar(const std::filesystem::path& path);
[[nodiscard]] VectorMap read_pfm_vector(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const ScalarMap& map);
void write_pfm(const std::filesystem::path& path, const VectorMap& map);

// PNG through libpng.  Masks are 8-bit single channel (255 = set); label maps
// are 16-bit single channel; color images are 8-bit RGB mapped to [0, 1].
[[nodiscard]] MaskMap read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const MaskMap& mask);
[[nodiscard]] Raster<std::uint8_t> read_gray8_png(const std::filesystem::path& path);
void write_gray8_png(const std::filesystem::path& path, const Raster<std::uint8_t>& image);
[[nodiscard]] LabelRaster read_label_png(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const LabelRaster& labels);
[[nodiscard]] VectorMap read_rgb_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const VectorMap& rgb);

/// {"views":[{"id","width","height","K":[9],"R":[9],"t":[3]}]} with row-major matrices.
[[nodiscard]] std::vector<CameraView> read_cameras_json(const std::filesystem::path& path);
void write_cameras_json(const std::filesystem::path& path, const std::vector<CameraView>& cameras);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
[[nodiscard]] std::string read_file(const std::filesystem::path& path);

}  // namespace planesplat::io
