#include "lgcn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace lgcn {

namespace {

constexpr LatLon kWorldOrigin{40.4406, -79.9959};
constexpr double kMetersPerDegree = kEarthRadiusMeters * std::numbers::pi / 180.0;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

double uni(std::mt19937_64& g, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g); }

// Channel value pushed toward the ends of the range.
double vivid(std::mt19937_64& g) {
  const double t = uni(g, 0.0, 1.0);
  return t < 0.5 ? 0.05 + 0.5 * t : 0.45 + 0.5 * t;
}

// Colors shared by all places of a world so that distinct places can look alike.
constexpr double kEdgeSoftness = 0.1;
constexpr std::size_t kPaletteSize = 4;
std::vector<std::array<double, 3>> world_palette(std::uint64_t seed) {
  auto g = stream(seed, 0, 0, 4);
  std::vector<std::array<double, 3>> palette(kPaletteSize);
  for (auto& c : palette) {
    for (double& v : c) v = vivid(g);
  }
  return palette;
}

double frac(double x) { return x - std::floor(x); }

LatLon offset_meters(LatLon p, double north, double east) {
  return {p.lat + north / kMetersPerDegree,
          p.lon + east / (kMetersPerDegree * std::cos(p.lat * std::numbers::pi / 180.0))};
}

std::string place_name(std::size_t place) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%04zu", place);
  return buf;
}

}  // namespace

std::vector<double> PlaceSpec::signature() const {
  std::vector<double> s{static_cast<double>(place), anchor.lat, anchor.lon, horizon};
  s.insert(s.end(), sky, sky + 3);
  s.insert(s.end(), ground, ground + 3);
  for (const auto& b : buildings) {
    s.insert(s.end(), {b.center, b.width, b.height, b.color[0], b.color[1], b.color[2], b.window_freq_x,
                       b.window_freq_y});
  }
  s.insert(s.end(), {road_angle, road_freq, road[0], road[1], road[2]});
  for (const auto& v : vegetation) s.insert(s.end(), {v.u, v.v, v.radius});
  return s;
}

PlaceSpec make_place(std::uint64_t seed, std::size_t place, LatLon anchor) {
  auto g = stream(seed, place, 0, 1);
  PlaceSpec p;
  p.place = place;
  p.anchor = anchor;
  p.horizon = uni(g, 0.25, 0.75);
  const auto palette = world_palette(seed);
  const auto index = [&](std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(uni(g, 0.0, static_cast<double>(n)))); };
  const auto pick = [&](double* dst) {
    const auto& c = palette[index(kPaletteSize)];
    std::copy(c.begin(), c.end(), dst);
  };
  // sky and ground always differ so the horizon is visible
  const std::size_t sky = index(kPaletteSize);
  const std::size_t ground = (sky + 1 + index(kPaletteSize - 1)) % kPaletteSize;
  std::copy(palette[sky].begin(), palette[sky].end(), p.sky);
  std::copy(palette[ground].begin(), palette[ground].end(), p.ground);
  const auto n_buildings = static_cast<std::size_t>(uni(g, 2.0, 5.0));
  for (std::size_t i = 0; i < n_buildings; ++i) {
    Building b{};
    b.center = uni(g, -0.3, 1.3);
    b.width = uni(g, 0.2, 0.5);
    b.height = uni(g, 0.1, 0.3);
    pick(b.color);
    b.window_freq_x = uni(g, 2.0, 5.0);
    b.window_freq_y = uni(g, 3.0, 8.0);
    p.buildings.push_back(b);
  }
  p.road_angle = uni(g, -0.15, 0.15);
  p.road_freq = uni(g, 2.0, 5.0);
  const double gray = uni(g, 0.2, 0.6);
  p.road[0] = p.road[1] = p.road[2] = gray;
  const auto n_blobs = static_cast<std::size_t>(uni(g, 2.0, 6.0));
  for (std::size_t i = 0; i < n_blobs; ++i) p.vegetation.push_back({uni(g, -0.2, 1.2), uni(g, 0.3, 1.0), uni(g, 0.05, 0.15)});
  return p;
}

ViewCondition random_condition(std::uint64_t seed, std::size_t place, std::size_t view) {
  auto g = stream(seed, place, view, 2);
  ViewCondition c;
  c.offset = uni(g, -kMaxViewOffset, kMaxViewOffset);
  c.gain = uni(g, 0.85, 1.15);
  c.bias = uni(g, -0.05, 0.05);
  c.noise = uni(g, 0.0, 0.04);
  c.season = uni(g, 0.0, 1.0);
  c.noise_seed = g();
  return c;
}

Tensor render_view(const PlaceSpec& place, const ViewCondition& cond, std::size_t size) {
  Tensor img({size, size, 3});
  std::mt19937_64 noise_rng(cond.noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s = static_cast<double>(size);
  const double tint[3] = {1.0 - 0.15 * cond.season, 1.0 - 0.05 * cond.season, 1.0 + 0.15 * cond.season};
  double veg[3];
  const double summer[3] = {0.15, 0.55, 0.15}, winter[3] = {0.55, 0.5, 0.4};
  for (int k = 0; k < 3; ++k) veg[k] = summer[k] + cond.season * (winter[k] - summer[k]);
  const double ca = std::cos(place.road_angle), sa = std::sin(place.road_angle);

  for (std::size_t y = 0; y < size; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / s;
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / s + cond.offset;
      double col[3];
      if (v < place.horizon) {
        std::copy(place.sky, place.sky + 3, col);
      } else {
        std::copy(place.ground, place.ground + 3, col);
        if (frac(((v - place.horizon) * ca + u * sa) * place.road_freq) < 0.3) std::copy(place.road, place.road + 3, col);
      }
      for (const Building& b : place.buildings) {
        const double left = b.center - b.width / 2.0;
        if (u < left - kEdgeSoftness || u > left + b.width + kEdgeSoftness || v < place.horizon - b.height ||
            v > place.horizon + 0.05)
          continue;
        const double cover = std::clamp(std::min(u - left, left + b.width - u) / kEdgeSoftness + 0.5, 0.0, 1.0);
        const double wx = frac((u - left) * b.window_freq_x), wy = frac(v * b.window_freq_y);
        const double shade = (wx > 0.25 && wx < 0.75 && wy > 0.3 && wy < 0.7) ? 0.7 : 1.0;
        for (int k = 0; k < 3; ++k) col[k] += cover * (b.color[k] * shade - col[k]);
      }
      for (const Blob& blob : place.vegetation) {
        const double d2 = (u - blob.u) * (u - blob.u) + (v - blob.v) * (v - blob.v);
        const double w = 0.7 * std::exp(-d2 / (blob.radius * blob.radius));
        for (int k = 0; k < 3; ++k) col[k] += w * (veg[k] - col[k]);
      }
      for (int k = 0; k < 3; ++k) {
        const double n = cond.noise > 0.0 ? cond.noise * normal(noise_rng) : 0.0;
        img.at(y, x, static_cast<std::size_t>(k)) = std::clamp(cond.gain * (tint[k] * col[k] + n) + cond.bias, 0.0, 1.0);
      }
    }
  }
  return img;
}

World generate_world(std::uint64_t seed, std::size_t n_places, std::size_t views_per_place, std::size_t image_size) {
  if (n_places < 2) throw std::invalid_argument("generate_world: need at least 2 places");
  if (views_per_place < 1) throw std::invalid_argument("generate_world: need at least 1 view per place");
  World world;
  world.manifest.name = "synthetic-" + std::to_string(seed);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_places))));
  const std::size_t db_views = (views_per_place + 1) / 2;
  for (std::size_t p = 0; p < n_places; ++p) {
    const LatLon anchor = offset_meters(kWorldOrigin, static_cast<double>(p / cols) * kPlaceSpacingMeters,
                                        static_cast<double>(p % cols) * kPlaceSpacingMeters);
    const PlaceSpec spec = make_place(seed, p, anchor);
    for (std::size_t v = 0; v < views_per_place; ++v) {
      auto g = stream(seed, p, v, 3);
      const double r = kMaxGeotagJitterMeters * std::sqrt(uni(g, 0.0, 1.0));
      const double a = uni(g, 0.0, 2.0 * std::numbers::pi);
      ManifestRecord rec;
      char id[48];
      std::snprintf(id, sizeof id, "%s_v%02zu", place_name(p).c_str(), v);
      rec.id = id;
      rec.path = "images/" + rec.id + ".ppm";
      rec.pos = offset_meters(anchor, r * std::cos(a), r * std::sin(a));
      rec.place_id = place_name(p);
      rec.split = v < db_views ? Split::kDatabase : Split::kQuery;
      world.manifest.records.push_back(std::move(rec));
      world.images.push_back(render_view(spec, random_condition(seed, p, v), image_size));
    }
  }
  return world;
}

std::string encode_ppm(const Tensor& image) {
  expect_rank(image, 3, "encode_ppm");
  if (image.dim(2) != 3) throw ShapeError("encode_ppm: channel axis must be 3");
  std::ostringstream out(std::ios::binary);
  out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (double v : image.data()) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  return out.str();
}

void write_ppm(const std::string& path, const Tensor& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const std::string bytes = encode_ppm(image);
  out.write(bytes.data(), static_cast<long>(bytes.size()));
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w == 0 || h == 0) throw std::runtime_error(path + ": unsupported PPM");
  in.get();
  std::string bytes(w * h * 3, '\0');
  if (!in.read(bytes.data(), static_cast<long>(bytes.size()))) throw std::runtime_error(path + ": truncated PPM");
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return img;
}

void write_world(const std::string& dir, const World& world) {
  std::filesystem::create_directories(std::filesystem::path(dir) / "images");
  for (std::size_t i = 0; i < world.images.size(); ++i) {
    write_ppm((std::filesystem::path(dir) / world.manifest.records[i].path).string(), world.images[i]);
  }
  write_manifest_file((std::filesystem::path(dir) / "manifest.csv").string(), world.manifest);
}

std::vector<Tensor> load_images(const std::string& dir, const DatasetManifest& manifest) {
  std::vector<Tensor> images;
  images.reserve(manifest.records.size());
  for (const auto& r : manifest.records) images.push_back(read_ppm((std::filesystem::path(dir) / r.path).string()));
  return images;
}

}  // namespace lgcn
