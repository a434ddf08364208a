#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgcn/retrieval.hpp"
#include "lgcn/tensor.hpp"

namespace lgcn {

struct Building {
  double center, width, height;  // world units: image widths / heights
  double color[3];
  double window_freq_x, window_freq_y;
};

struct Blob {
  double u, v, radius;
};

/// Deterministic scene description of one place.
struct PlaceSpec {
  std::size_t place = 0;
  LatLon anchor;
  double horizon = 0.5;
  double sky[3] = {0, 0, 0};
  double ground[3] = {0, 0, 0};
  std::vector<Building> buildings;
  double road_angle = 0.0, road_freq = 0.0;
  double road[3] = {0, 0, 0};
  std::vector<Blob> vegetation;

  /// Flat parameter vector; equal signatures mean identical scenes.
  std::vector<double> signature() const;
};

/// Photometric and viewpoint variation of one rendering.
struct ViewCondition {
  double offset = 0.0;  // horizontal viewpoint shift, fraction of image width, [-0.2, 0.2]
  double gain = 1.0;    // illumination gain
  double bias = 0.0;    // illumination bias
  double noise = 0.0;   // additive Gaussian sigma
  double season = 0.0;  // 0 summer .. 1 winter; recolors vegetation and tints the frame
  std::uint64_t noise_seed = 0;
};

inline constexpr double kMaxViewOffset = 0.2;
inline constexpr double kPlaceSpacingMeters = 60.0;
inline constexpr double kMaxGeotagJitterMeters = 4.5;

PlaceSpec make_place(std::uint64_t seed, std::size_t place, LatLon anchor);
ViewCondition random_condition(std::uint64_t seed, std::size_t place, std::size_t view);

/// size x size x 3 image with values in [0, 1].
Tensor render_view(const PlaceSpec& place, const ViewCondition& cond, std::size_t size);

struct World {
  DatasetManifest manifest;
  std::vector<Tensor> images;  // parallel to manifest.records
};

/// Places on a square grid kPlaceSpacingMeters apart, each rendered under
/// `views_per_place` random conditions with geotags jittered from the
/// anchor. The first half of each place's views (rounded up) form the
/// database, the rest are queries.
World generate_world(std::uint64_t seed, std::size_t n_places, std::size_t views_per_place, std::size_t image_size);

/// Binary P6 with 8-bit channels; values are clamped to [0, 1] and rounded.
void write_ppm(const std::string& path, const Tensor& image);
std::string encode_ppm(const Tensor& image);
Tensor read_ppm(const std::string& path);

/// Writes images/<id>.ppm and manifest.csv under `dir`.
void write_world(const std::string& dir, const World& world);
/// Loads every image named by a manifest, relative to `dir`.
std::vector<Tensor> load_images(const std::string& dir, const DatasetManifest& manifest);

}  // namespace lgcn
