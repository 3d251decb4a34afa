#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "planesplat/render.hpp"
#include "planesplat/splat.hpp"
#include "planesplat/supervision.hpp"

namespace planesplat {

struct LearningRates {
  double mu_init = 1.6e-4;
  double mu_final = 1.6e-6;
  double log_scale = 5e-3;
  double rot = 1e-3;
  double opacity = 5e-2;
  double rgb = 2.5e-3;

  /// Log-linear decay from mu_init at 0 to mu_final at total_iters.
  [[nodiscard]] double mu_at(int iteration, int total_iters) const;
};

struct Schedule {
  int total_iters = 30000;
  int start_dn = 7000;
  int start_p = 14000;
  int start_rd = 7000;
  int start_rn = 20000;
  LearningRates lr;

  /// Starts scaled by 7/30, 14/30, 7/30 and 20/30 of `total_iters`.
  [[nodiscard]] static Schedule scaled(int total_iters);
  /// A term is active from its start iteration onwards.
  [[nodiscard]] ActiveTerms active(int iteration) const;
  /// Throws ValidationError unless 0 <= start <= total_iters for every term.
  void validate() const;
};

/// Epoch-based view order: permutation of all views reshuffled per epoch
/// from (seed, epoch).
[[nodiscard]] int select_view(int iteration, int num_views, std::uint64_t seed);

/// Adam with per-group learning rates.  Quaternions are renormalized after
/// every step.
class Adam {
 public:
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-15);

  void step(GaussianCloud& scene, const GaussianGradients& grads, const LearningRates& lr, double mu_lr);
  [[nodiscard]] int steps() const noexcept { return t_; }

 private:
  double b1_;
  double b2_;
  double eps_;
  int t_ = 0;
  GaussianGradients m_;
  GaussianGradients v_;
};

struct TrainView {
  const CameraView* camera = nullptr;
  ViewSupervision sup;
};

struct LossLogRow {
  int iteration = 0;
  int view = 0;
  LossBreakdown loss;  ///< unweighted term values, weighted total
  ActiveTerms active;
};

struct TrainConfig {
  Schedule schedule;
  LossWeights weights;
  RenderSettings render;
  int normal_offset = 1;
  std::uint64_t seed = 0;
  int ckpt_every = 0;  ///< 0 disables checkpoints
  /// Called with (iteration, scene) every ckpt_every iterations and after the last one.
  std::function<void(int, const GaussianCloud&)> checkpoint;
  /// Progress and schedule messages.
  std::function<void(const std::string&)> log;
  /// Where the offending view's rasters are written on a non-finite loss.
  std::filesystem::path dump_dir;
};

struct TrainResult {
  GaussianCloud scene;
  std::vector<LossLogRow> log;
};

/// Runs schedule.total_iters optimizer steps.  Throws NonFiniteLossError
/// (after dumping the view's rasters when dump_dir is set) if a loss or
/// gradient becomes non-finite.
[[nodiscard]] TrainResult train(GaussianCloud scene, std::span<const TrainView> views, const TrainConfig& cfg);

/// iteration,view,l_rgb,l_s,l_dn,l_p,l_rd,l_rn,total,active_dn,active_p,active_rd,active_rn
void write_loss_csv(std::ostream& out, std::span<const LossLogRow> rows);

}  // namespace planesplat
