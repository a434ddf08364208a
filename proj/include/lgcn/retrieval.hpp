#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgcn/tensor.hpp"

namespace lgcn {

inline constexpr double kEarthRadiusMeters = 6371000.0;
inline constexpr double kPositiveRadiusMeters = 10.0;
inline constexpr double kNegativeRadiusMeters = 25.0;
inline constexpr double kMatchRadiusMeters = 25.0;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

/// Haversine great-circle distance in meters. Rejects coordinates outside
/// [-90, 90] x [-180, 180] with std::invalid_argument.
double geodistance(LatLon a, LatLon b);

enum class Split { kDatabase, kQuery };

struct ManifestRecord {
  std::string id;
  std::string path;
  LatLon pos;
  std::optional<std::string> place_id;
  Split split = Split::kDatabase;
};

/// Geotagged image list; CSV header `id,path,lat,lon,place_id,split`.
struct DatasetManifest {
  std::string name;
  std::vector<ManifestRecord> records;

  /// Unique ids and in-range coordinates, else std::invalid_argument.
  void validate() const;
  std::vector<std::size_t> indices(Split split) const;
};

DatasetManifest parse_manifest(std::istream& in, std::string name = "dataset");
void write_manifest(std::ostream& out, const DatasetManifest& manifest);
DatasetManifest read_manifest_file(const std::string& path);
void write_manifest_file(const std::string& path, const DatasetManifest& manifest);

/// Same place: shared place id, or within `radius` meters.
bool same_place(const ManifestRecord& a, const ManifestRecord& b, double radius);

struct Neighbor {
  std::size_t index;  // row in the database matrix
  double similarity;
};

/// Exact top-k by dot product (cosine on unit vectors). Ties go to the
/// smaller database id when `db_ids` is given, otherwise the smaller row.
/// k larger than the database clamps to its size with a warning on stderr.
std::vector<std::vector<Neighbor>> search(const Tensor& queries, const Tensor& database, std::size_t k,
                                          std::span<const std::string> db_ids = {});

struct QueryOutcome {
  std::string query_id;
  std::vector<std::string> top_ids;
  bool has_ground_truth = false;
  std::size_t first_hit_rank = 0;  // 1-based; 0 when no hit in the list
};

struct RecallResult {
  std::vector<std::size_t> n_values;
  std::vector<double> recall;  // parallel to n_values
  double threshold_m = kMatchRadiusMeters;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // queries without any true match in the database
  std::vector<QueryOutcome> queries;
};

/// Fraction of evaluable queries with a correct database item in their
/// top N. `query_rows` / `db_rows` map search rows to manifest records.
RecallResult recall_at_n(const std::vector<std::vector<Neighbor>>& results, const DatasetManifest& manifest,
                         std::span<const std::size_t> query_rows, std::span<const std::size_t> db_rows,
                         std::vector<std::size_t> n_values, double threshold_m = kMatchRadiusMeters);

nlohmann::json to_json(const RecallResult& r, const std::string& dataset, bool per_query);

/// Binary dump: "LGCNDESC", u32 version, u64 count, u32 dim, u32 bytes per
/// scalar (4 or 8), then row-major little-endian values.
void write_descriptors(const std::string& path, const Tensor& descriptors, std::size_t precision_bytes = 4);
Tensor read_descriptors(const std::string& path);

}  // namespace lgcn
