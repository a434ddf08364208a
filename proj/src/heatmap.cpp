#include "lgcn/heatmap.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>

#include "lgcn/synth.hpp"

namespace lgcn {

namespace {

constexpr std::array<std::array<double, 3>, 4> kRamp{{{0, 0, 0}, {0.8, 0.1, 0.05}, {1.0, 0.85, 0.1}, {1, 1, 1}}};

std::array<double, 3> ramp(double t) {
  t = std::clamp(t, 0.0, 1.0) * static_cast<double>(kRamp.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(t), kRamp.size() - 2);
  const double f = t - static_cast<double>(i);
  std::array<double, 3> c{};
  for (std::size_t k = 0; k < 3; ++k) c[k] = kRamp[i][k] + f * (kRamp[i + 1][k] - kRamp[i][k]);
  return c;
}

}  // namespace

Tensor response_map(const Tensor& f) {
  if (f.rank() != 3) throw ShapeError("response_map expects H x W x C, got " + shape_str(f.shape()));
  const std::size_t H = f.dim(0), W = f.dim(1), C = f.dim(2);
  Tensor out({H, W});
  for (std::size_t p = 0; p < H * W; ++p) {
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) s += f[p * C + c] * f[p * C + c];
    out[p] = std::sqrt(s);
  }
  return out;
}

Tensor colorize(const Tensor& m, double lo, double hi, std::size_t cell) {
  if (m.rank() != 2) throw ShapeError("colorize expects H x W, got " + shape_str(m.shape()));
  const std::size_t H = m.dim(0), W = m.dim(1);
  Tensor img({H * cell, W * cell, 3});
  for (std::size_t y = 0; y < H * cell; ++y)
    for (std::size_t x = 0; x < W * cell; ++x) {
      const double v = m.at(y / cell, x / cell);
      const auto c = ramp(hi > lo ? (v - lo) / (hi - lo) : 0.0);
      for (std::size_t k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
    }
  return img;
}

std::vector<std::pair<std::string, Tensor>> render_heatmaps(const LgcnModel& model, const Tensor& image) {
  ImageTrace t;
  model.forward_image(image, &t);
  std::vector<std::pair<std::string, Tensor>> out;
  const auto norm_map = [&](const std::string& name, const Tensor& f) {
    if (f.empty()) return;
    const Tensor r = response_map(f);
    const auto [lo, hi] = std::minmax_element(r.data().begin(), r.data().end());
    out.emplace_back(name, colorize(r, *lo, *hi));
  };
  norm_map("f_vit", t.f_vit);
  norm_map("f_res", t.f_res);
  if (!t.omega.empty()) {
    const std::size_t H = t.omega.dim(0), W = t.omega.dim(1), C = t.omega.dim(2);
    Tensor mean({H, W});
    for (std::size_t p = 0; p < H * W; ++p) {
      double s = 0;
      for (std::size_t c = 0; c < C; ++c) s += t.omega[p * C + c];
      mean[p] = s / static_cast<double>(C);
    }
    out.emplace_back("omega", colorize(mean, 0.0, 1.0));
  }
  norm_map("fused", t.fused);
  return out;
}

std::vector<std::string> write_heatmaps(const std::string& dir, const LgcnModel& model, const Tensor& image) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (const auto& [name, img] : render_heatmaps(model, image)) {
    paths.push_back((std::filesystem::path(dir) / (name + ".ppm")).string());
    write_ppm(paths.back(), img);
  }
  return paths;
}

}  // namespace lgcn
