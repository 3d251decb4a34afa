#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "planesplat/raster.hpp"

namespace planesplat {

struct PlaneLabelInfo {
  std::string source_class;                  ///< proposal label, e.g. "wall"
  Eigen::Vector3d mean_normal = Eigen::Vector3d::Constant(kInvalid);  ///< camera frame, unit
  double score = 0.0;
  int pixel_count = 0;
};

/// Per-view plane segmentation: 0 = non-planar, 1..L plane ids with metadata
/// stored at info[id - 1].
struct PlaneLabelMap {
  int view_id = 0;
  LabelRaster labels;
  std::vector<PlaneLabelInfo> info;

  [[nodiscard]] int width() const noexcept { return labels.width(); }
  [[nodiscard]] int height() const noexcept { return labels.height(); }
  [[nodiscard]] int num_labels() const noexcept { return static_cast<int>(info.size()); }
  [[nodiscard]] MaskMap mask(int label) const;
};

inline MaskMap PlaneLabelMap::mask(int label) const {
  MaskMap out(labels.width(), labels.height(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == label ? 1 : 0;
  return out;
}

}  // namespace planesplat
