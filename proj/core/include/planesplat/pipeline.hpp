#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "planesplat/fixtures.hpp"
#include "planesplat/fusion.hpp"
#include "planesplat/lp3.hpp"
#include "planesplat/optimizer.hpp"
#include "planesplat/priors.hpp"
#include "planesplat/splat.hpp"

namespace planesplat {

/// Everything a run needs.  Stages read their inputs from files under
/// `input` and `workdir` only; the resolved config is stored in the manifest.
struct RunConfig {
  std::filesystem::path workdir = "run";
  std::filesystem::path input;  ///< empty: <workdir>/input
  std::uint64_t seed = 0;
  std::vector<std::string> prompts{"wall", "floor", "ceiling", "table"};  ///< recorded only

  FixtureConfig fixture;

  AlignmentConfig align;
  int group_size = 40;
  double conf_threshold = 1.5;
  CannyConfig canny;

  Lp3Config lp3;
  int lp3_neighbors = 2;  ///< views on each side used for cross-view fusion

  PlaneInitConfig init;
  bool init_from_sparse = true;

  int iterations = 3000;
  /// Term starts; negative values take the scaled defaults.
  int start_dn = -1;
  int start_p = -1;
  int start_rd = -1;
  int start_rn = -1;
  LossWeights weights;
  LearningRates lr;
  RenderSettings render;
  int normal_offset = 1;
  int ckpt_every = 0;

  double voxel_size = 0.02;
  double trunc_m = 0.0;  ///< 0: 4 voxels
  double fuse_margin = 0.1;
  float min_weight = 0.0f;

  SurfaceMetricsConfig metrics;
  bool heatmaps = false;

  [[nodiscard]] std::filesystem::path input_dir() const { return input.empty() ? workdir / "input" : input; }
  [[nodiscard]] Schedule schedule() const;
  /// Throws ValidationError for inconsistent settings.
  void validate() const;
};

/// Parses a config document.  Missing keys keep their defaults; unknown keys
/// are rejected.  A manifest is accepted too (its "config" member is used).
[[nodiscard]] RunConfig config_from_json(const std::string& text);
[[nodiscard]] std::string config_to_json(const RunConfig& cfg);

struct StageOptions {
  bool force = false;
  std::function<void(const std::string&)> log;
};

enum class StageStatus { ran, skipped };

/// Stage entry points.  Each checks that its upstream stages completed
/// (ValidationError naming the missing artifact otherwise), writes into a
/// temporary directory that is renamed into place on success and records
/// itself in <workdir>/manifest.json.  A stage whose recorded key matches is
/// skipped unless `force` is set.
StageStatus cmd_make_fixture(const RunConfig& cfg, const StageOptions& opt = {});
StageStatus cmd_align(const RunConfig& cfg, const StageOptions& opt = {});
StageStatus cmd_lp3(const RunConfig& cfg, const StageOptions& opt = {});
StageStatus cmd_train(const RunConfig& cfg, const StageOptions& opt = {});
StageStatus cmd_fuse(const RunConfig& cfg, const StageOptions& opt = {});
StageStatus cmd_eval(const RunConfig& cfg, const StageOptions& opt = {});
/// make-fixture (when the input directory holds no cameras.json), align,
/// lp3, train, fuse and eval in order.
void cmd_all(const RunConfig& cfg, const StageOptions& opt = {});

/// Writes a fixture in the input layout read by the stages.
void write_fixture(const Fixture& fx, const std::vector<std::string>& prompts, const std::filesystem::path& dir);

/// 64-bit FNV-1a of a byte string, as 16 hex digits.
[[nodiscard]] std::string content_hash(const std::string& bytes);

}  // namespace planesplat
