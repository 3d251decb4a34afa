#include "planesplat/priors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "planesplat/error.hpp"

namespace planesplat {

namespace {

bool solve_weighted(std::span<const DepthPair> pairs, const std::vector<double>& w, double& s, double& t) {
  // normal equations of min sum w (s x + t - y)^2
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double x = pairs[i].dense;
    const double y = pairs[i].sparse;
    sw += w[i];
    sx += w[i] * x;
    sy += w[i] * y;
    sxx += w[i] * x * x;
    sxy += w[i] * x * y;
  }
  const double det = sw * sxx - sx * sx;
  if (!(std::abs(det) > 1e-12 * std::max(1.0, sw * sxx))) return false;
  s = (sw * sxy - sx * sy) / det;
  t = (sxx * sy - sx * sxy) / det;
  return std::isfinite(s) && std::isfinite(t);
}

}  // namespace

AlignmentParams align_scale_shift(std::span<const DepthPair> input, const AlignmentConfig& cfg) {
  if (static_cast<int>(input.size()) < cfg.min_samples) {
    throw AlignmentError("scale/shift alignment needs at least " + std::to_string(cfg.min_samples) +
                         " samples, got " + std::to_string(input.size()));
  }
  std::vector<DepthPair> pairs(input.begin(), input.end());
  std::sort(pairs.begin(), pairs.end(), [](const DepthPair& a, const DepthPair& b) {
    return a.dense != b.dense ? a.dense < b.dense : a.sparse < b.sparse;
  });

  std::vector<double> w(pairs.size(), 1.0);
  AlignmentParams out;
  if (!solve_weighted(pairs, w, out.s, out.t)) {
    throw DegenerateAlignmentError("scale/shift alignment is singular (constant dense depth)");
  }
  for (int it = 0; it < cfg.max_iterations; ++it) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double r = pairs[i].sparse - (out.s * pairs[i].dense + out.t);
      w[i] = 1.0 / std::max(std::abs(r), cfg.weight_floor);
    }
    double s = 0, t = 0;
    if (!solve_weighted(pairs, w, s, t)) break;
    out.s = s;
    out.t = t;
    out.iterations = it + 1;
  }
  if (!(out.s > 0.0)) {
    throw DegenerateAlignmentError("scale/shift alignment produced non-positive scale " + std::to_string(out.s));
  }
  out.samples = static_cast<int>(pairs.size());
  double sum = 0.0;
  for (const auto& p : pairs) sum += std::abs(p.sparse - (out.s * p.dense + out.t));
  out.mean_abs_residual = sum / static_cast<double>(pairs.size());
  return out;
}

AlignmentParams align_scale_shift(std::span<const ScalarMap* const> dense, std::span<const SparseDepth> sparse,
                                  const AlignmentConfig& cfg) {
  if (dense.size() != sparse.size()) throw InvalidArgument("align_scale_shift: dense/sparse view count mismatch");
  std::vector<DepthPair> pairs;
  for (std::size_t k = 0; k < dense.size(); ++k) {
    const ScalarMap& d = *dense[k];
    for (const auto& smp : sparse[k].samples) {
      const int u = static_cast<int>(std::lround(smp.u));
      const int v = static_cast<int>(std::lround(smp.v));
      if (!d.in_bounds(u, v) || !(smp.depth > 0.0)) continue;
      const double x = d(u, v);
      if (!is_valid(x) || x <= 0.0) continue;
      pairs.push_back({x, smp.depth});
    }
  }
  return align_scale_shift(pairs, cfg);
}

ScalarMap apply_alignment(const ScalarMap& dense, const AlignmentParams& p) {
  ScalarMap out(dense.width(), dense.height());
  for (std::size_t i = 0; i < dense.size(); ++i) out[i] = p.s * dense[i] + p.t;
  return out;
}

namespace {

Raster<double> luma(const VectorMap& rgb) {
  Raster<double> out(rgb.width(), rgb.height());
  for (std::size_t i = 0; i < rgb.size(); ++i) out[i] = 0.299 * rgb[i].x() + 0.587 * rgb[i].y() + 0.114 * rgb[i].z();
  return out;
}

// Separable Gaussian blur with clamped borders.
Raster<double> blur(const Raster<double>& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& x : k) x /= sum;
  const int W = img.width();
  const int H = img.height();
  Raster<double> tmp(W, H), out(W, H);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * img(std::clamp(u + i, 0, W - 1), v);
      tmp(u, v) = s;
    }
  }
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp(u, std::clamp(v + i, 0, H - 1));
      out(u, v) = s;
    }
  }
  return out;
}

}  // namespace

MaskMap canny_edges(const VectorMap& rgb, const CannyConfig& cfg) {
  const int W = rgb.width();
  const int H = rgb.height();
  MaskMap edges(W, H, 0);
  if (W == 0 || H == 0) return edges;
  const Raster<double> g = blur(luma(rgb), cfg.sigma);
  auto at = [&](int u, int v) { return g(std::clamp(u, 0, W - 1), std::clamp(v, 0, H - 1)); };

  Raster<double> mag(W, H, 0.0);
  Raster<std::uint8_t> dir(W, H, 0);  // 0: horizontal gradient, 1: 45, 2: vertical, 3: 135
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const double gx = (at(u + 1, v - 1) + 2 * at(u + 1, v) + at(u + 1, v + 1) - at(u - 1, v - 1) -
                         2 * at(u - 1, v) - at(u - 1, v + 1)) /
                        4.0;
      const double gy = (at(u - 1, v + 1) + 2 * at(u, v + 1) + at(u + 1, v + 1) - at(u - 1, v - 1) -
                         2 * at(u, v - 1) - at(u + 1, v - 1)) /
                        4.0;
      mag(u, v) = std::hypot(gx, gy);
      double angle = std::atan2(gy, gx) * 180.0 / M_PI;
      if (angle < 0) angle += 180.0;
      dir(u, v) = angle < 22.5 || angle >= 157.5 ? 0 : angle < 67.5 ? 1 : angle < 112.5 ? 2 : 3;
    }
  }

  static constexpr int kDu[4] = {1, 1, 0, -1};
  static constexpr int kDv[4] = {0, 1, 1, 1};
  auto m = [&](int u, int v) { return mag.in_bounds(u, v) ? mag(u, v) : 0.0; };
  Raster<std::uint8_t> cls(W, H, 0);  // 2 strong, 1 weak
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const double c = mag(u, v);
      if (c < cfg.low) continue;
      const int d = dir(u, v);
      // plateaus are kept whole; the tolerance stops rounding from picking a side
      const double tol = 1e-9 * c;
      if (!(c >= m(u - kDu[d], v - kDv[d]) - tol && c >= m(u + kDu[d], v + kDv[d]) - tol)) continue;
      cls(u, v) = c >= cfg.high ? 2 : 1;
    }
  }

  std::vector<std::pair<int, int>> stack;
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      if (cls(u, v) == 2) {
        edges(u, v) = 1;
        stack.emplace_back(u, v);
      }
    }
  }
  while (!stack.empty()) {
    const auto [u, v] = stack.back();
    stack.pop_back();
    for (int dv = -1; dv <= 1; ++dv) {
      for (int du = -1; du <= 1; ++du) {
        const int uu = u + du;
        const int vv = v + dv;
        if (!cls.in_bounds(uu, vv) || edges(uu, vv) || cls(uu, vv) == 0) continue;
        edges(uu, vv) = 1;
        stack.emplace_back(uu, vv);
      }
    }
  }
  return edges;
}

MaskMap low_texture_mask(const VectorMap& rgb, const CannyConfig& cfg) {
  const MaskMap edges = canny_edges(rgb, cfg);
  const int W = rgb.width();
  const int H = rgb.height();
  const int d = std::max(0, cfg.dilate_px);
  // separable square dilation
  MaskMap rows(W, H, 0);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      if (!edges(u, v)) continue;
      for (int x = std::max(0, u - d); x <= std::min(W - 1, u + d); ++x) rows(x, v) = 1;
    }
  }
  MaskMap lt(W, H, 1);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      if (!rows(u, v)) continue;
      for (int y = std::max(0, v - d); y <= std::min(H - 1, v + d); ++y) lt(u, y) = 0;
    }
  }
  return lt;
}

MaskMap confidence_mask(const ScalarMap& conf, double threshold) {
  MaskMap out(conf.width(), conf.height(), 0);
  for (std::size_t i = 0; i < conf.size(); ++i) out[i] = conf[i] >= threshold ? 1 : 0;
  return out;
}

ScalarMap resize_bilinear(const ScalarMap& src, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidArgument("resize_bilinear: empty target size");
  if (src.empty()) throw InvalidArgument("resize_bilinear: empty source");
  ScalarMap out(width, height, kInvalid);
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      // pixel centres aligned
      const double x = std::clamp((u + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const double y = std::clamp((v + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
      const int x0 = static_cast<int>(std::floor(x));
      const int y0 = static_cast<int>(std::floor(y));
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const int y1 = std::min(y0 + 1, src.height() - 1);
      const double fx = x - x0;
      const double fy = y - y0;
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const double s[4] = {src(x0, y0), src(x1, y0), src(x0, y1), src(x1, y1)};
      double acc = 0.0, wsum = 0.0;
      for (int k = 0; k < 4; ++k) {
        if (!is_valid(s[k]) || w[k] == 0.0) continue;
        acc += w[k] * s[k];
        wsum += w[k];
      }
      if (wsum > 0.0) out(u, v) = acc / wsum;
    }
  }
  return out;
}

ScalarMap resize_nearest(const ScalarMap& src, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidArgument("resize_nearest: empty target size");
  if (src.empty()) throw InvalidArgument("resize_nearest: empty source");
  ScalarMap out(width, height);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const int x = std::min(src.width() - 1, static_cast<int>((u + 0.5) * src.width() / width));
      const int y = std::min(src.height() - 1, static_cast<int>((v + 0.5) * src.height() / height));
      out(u, v) = src(x, y);
    }
  }
  return out;
}

}  // namespace planesplat
