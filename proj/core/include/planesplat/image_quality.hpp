#pragma once

#include "planesplat/raster.hpp"

namespace planesplat {

inline constexpr double kPsnrCapDb = 99.0;

/// Structural similarity averaged over pixels and the three channels, using
/// an 11x11 Gaussian window (sigma 1.5) with zero padding, K1 = 0.01 and
/// K2 = 0.03 for a unit dynamic range.  When `grad` is given it receives
/// d(mean SSIM)/d(a), scaled by `grad_scale` and added to what it holds.
[[nodiscard]] double ssim(const VectorMap& a, const VectorMap& b, VectorMap* grad = nullptr, double grad_scale = 1.0);

/// -10 log10(MSE) over all channels; identical images report kPsnrCapDb.
[[nodiscard]] double psnr(const VectorMap& a, const VectorMap& b);

}  // namespace planesplat
