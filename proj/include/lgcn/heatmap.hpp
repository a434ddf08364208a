#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lgcn/model.hpp"

namespace lgcn {

/// Per-position L2 norm over channels of an H x W x C map.
Tensor response_map(const Tensor& features);

/// Maps scalars to RGB with a fixed black-red-yellow-white ramp.
/// Values are normalized by [lo, hi]; lo == hi renders black.
Tensor colorize(const Tensor& scalars, double lo, double hi, std::size_t cell = 8);

/// Named RGB images for the feature streams of one forward pass:
/// f_vit, f_res, omega, fused (streams an ablation removes are omitted).
/// Norm maps are min-max scaled; omega uses its channel mean on [0, 1].
std::vector<std::pair<std::string, Tensor>> render_heatmaps(const LgcnModel& model, const Tensor& image);

/// Writes <name>.ppm for each map and returns the file paths.
std::vector<std::string> write_heatmaps(const std::string& dir, const LgcnModel& model, const Tensor& image);

}  // namespace lgcn
