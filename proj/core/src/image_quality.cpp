#include "planesplat/image_quality.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace planesplat {

namespace {

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, 2 * kRadius + 1> gaussian_window() {
  std::array<double, 2 * kRadius + 1> w{};
  double sum = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) {
    w[i + kRadius] = std::exp(-(i * i) / (2.0 * kSigma * kSigma));
    sum += w[i + kRadius];
  }
  for (double& x : w) x /= sum;
  return w;
}

// Separable zero-padded filtering with the (symmetric) window.
std::vector<double> filter(const std::vector<double>& img, int W, int H) {
  static const auto w = gaussian_window();
  std::vector<double> tmp(img.size(), 0.0);
  std::vector<double> out(img.size(), 0.0);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      double s = 0.0;
      for (int k = -kRadius; k <= kRadius; ++k) {
        const int uu = u + k;
        if (uu >= 0 && uu < W) s += w[k + kRadius] * img[static_cast<std::size_t>(v) * W + uu];
      }
      tmp[static_cast<std::size_t>(v) * W + u] = s;
    }
  }
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      double s = 0.0;
      for (int k = -kRadius; k <= kRadius; ++k) {
        const int vv = v + k;
        if (vv >= 0 && vv < H) s += w[k + kRadius] * tmp[static_cast<std::size_t>(vv) * W + u];
      }
      out[static_cast<std::size_t>(v) * W + u] = s;
    }
  }
  return out;
}

}  // namespace

double ssim(const VectorMap& a, const VectorMap& b, VectorMap* grad, double grad_scale) {
  require_same_shape(a, b, "ssim");
  const int W = a.width();
  const int H = a.height();
  const std::size_t n = a.size();
  if (n == 0) return 1.0;
  if (grad) require_same_shape(a, *grad, "ssim gradient");
  const double norm = 1.0 / (3.0 * static_cast<double>(n));

  double total = 0.0;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a[i][c];
      y[i] = b[i][c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mu_x = filter(x, W, H);
    const auto mu_y = filter(y, W, H);
    const auto e_xx = filter(xx, W, H);
    const auto e_yy = filter(yy, W, H);
    const auto e_xy = filter(xy, W, H);

    std::vector<double> d_mu(grad ? n : 0), d_xx(grad ? n : 0), d_xy(grad ? n : 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double sxx = e_xx[i] - mu_x[i] * mu_x[i];
      const double syy = e_yy[i] - mu_y[i] * mu_y[i];
      const double sxy = e_xy[i] - mu_x[i] * mu_y[i];
      const double A1 = 2.0 * mu_x[i] * mu_y[i] + kC1;
      const double A2 = 2.0 * sxy + kC2;
      const double B1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1;
      const double B2 = sxx + syy + kC2;
      const double s = (A1 * A2) / (B1 * B2);
      total += s;
      if (!grad) continue;
      // partials of s with respect to mu_x, sigma_xx and sigma_xy
      const double ds_dmu = (2.0 * mu_y[i] * A2) / (B1 * B2) - s * (2.0 * mu_x[i]) / B1;
      const double ds_dsxx = -s / B2;
      const double ds_dsxy = 2.0 * A1 / (B1 * B2);
      // re-express through the filtered moments E[x], E[x^2], E[xy]
      d_mu[i] = ds_dmu - 2.0 * mu_x[i] * ds_dsxx - mu_y[i] * ds_dsxy;
      d_xx[i] = ds_dsxx;
      d_xy[i] = ds_dsxy;
    }
    if (!grad) continue;
    const auto f_mu = filter(d_mu, W, H);
    const auto f_xx = filter(d_xx, W, H);
    const auto f_xy = filter(d_xy, W, H);
    for (std::size_t i = 0; i < n; ++i) {
      (*grad)[i][c] += grad_scale * norm * (f_mu[i] + 2.0 * x[i] * f_xx[i] + y[i] * f_xy[i]);
    }
  }
  return total * norm;
}

double psnr(const VectorMap& a, const VectorMap& b) {
  require_same_shape(a, b, "psnr");
  if (a.empty()) return kPsnrCapDb;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).squaredNorm();
  const double mse = sum / (3.0 * static_cast<double>(a.size()));
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, -10.0 * std::log10(mse));
}

}  // namespace planesplat
