#include "lgcn/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lgcn/binio.hpp"

namespace lgcn {

namespace {

void check_coordinate(LatLon p) {
  if (!(p.lat >= -90.0 && p.lat <= 90.0) || !(p.lon >= -180.0 && p.lon <= 180.0)) {
    std::ostringstream os;
    os << "coordinate out of range: (" << p.lat << ", " << p.lon << ")";
    throw std::invalid_argument(os.str());
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, std::size_t line_no, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("manifest line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
}

}  // namespace

double geodistance(LatLon a, LatLon b) {
  check_coordinate(a);
  check_coordinate(b);
  constexpr double kRad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * kRad;
  const double dlon = (b.lon - a.lon) * kRad;
  const double s1 = std::sin(dlat / 2.0), s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(a.lat * kRad) * std::cos(b.lat * kRad) * s2 * s2;
  return 2.0 * kEarthRadiusMeters * std::asin(std::min(1.0, std::sqrt(h)));
}

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.id.empty()) throw std::invalid_argument("manifest: empty id");
    if (!seen.insert(r.id).second) throw std::invalid_argument("manifest: duplicate id '" + r.id + "'");
    check_coordinate(r.pos);
  }
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(i);
  return out;
}

DatasetManifest parse_manifest(std::istream& in, std::string name) {
  DatasetManifest m;
  m.name = std::move(name);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("manifest: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,path,lat,lon,place_id,split") {
    throw std::invalid_argument("manifest: header must be 'id,path,lat,lon,place_id,split', got '" + line + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) {
      throw std::invalid_argument("manifest line " + std::to_string(line_no) + ": expected 6 fields, got " +
                                  std::to_string(f.size()));
    }
    ManifestRecord r;
    r.id = f[0];
    r.path = f[1];
    r.pos = {parse_double(f[2], line_no, "lat"), parse_double(f[3], line_no, "lon")};
    if (!f[4].empty()) r.place_id = f[4];
    if (f[5] == "database") {
      r.split = Split::kDatabase;
    } else if (f[5] == "query") {
      r.split = Split::kQuery;
    } else {
      throw std::invalid_argument("manifest line " + std::to_string(line_no) + ": split must be database or query");
    }
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void write_manifest(std::ostream& out, const DatasetManifest& m) {
  out << "id,path,lat,lon,place_id,split\n";
  char buf[64];
  for (const auto& r : m.records) {
    std::snprintf(buf, sizeof buf, "%.9f,%.9f", r.pos.lat, r.pos.lon);
    out << r.id << ',' << r.path << ',' << buf << ',' << r.place_id.value_or("") << ','
        << (r.split == Split::kDatabase ? "database" : "query") << '\n';
  }
}

DatasetManifest read_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  std::string name = path;
  const auto slash = name.find_last_of('/');
  if (slash != std::string::npos) name = name.substr(0, slash);
  const auto slash2 = name.find_last_of('/');
  if (slash2 != std::string::npos) name = name.substr(slash2 + 1);
  return parse_manifest(in, name);
}

void write_manifest_file(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  write_manifest(out, m);
}

bool same_place(const ManifestRecord& a, const ManifestRecord& b, double radius) {
  if (a.place_id && b.place_id && *a.place_id == *b.place_id) return true;
  return geodistance(a.pos, b.pos) <= radius;
}

std::vector<std::vector<Neighbor>> search(const Tensor& queries, const Tensor& database, std::size_t k,
                                          std::span<const std::string> db_ids) {
  expect_rank(queries, 2, "search queries");
  expect_rank(database, 2, "search database");
  if (queries.dim(1) != database.dim(1)) {
    throw ShapeError("search: descriptor axis 1 differs (" + std::to_string(queries.dim(1)) + " vs " +
                     std::to_string(database.dim(1)) + ")");
  }
  if (!db_ids.empty() && db_ids.size() != database.dim(0)) throw ShapeError("search: id count != database rows");
  const std::size_t nq = queries.dim(0), nd = database.dim(0), d = queries.dim(1);
  if (k > nd) {
    std::cerr << "warning: k=" << k << " exceeds database size " << nd << ", clamping\n";
    k = nd;
  }
  auto before = [&](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (!db_ids.empty() && db_ids[a.index] != db_ids[b.index]) return db_ids[a.index] < db_ids[b.index];
    return a.index < b.index;
  };
  std::vector<std::vector<Neighbor>> out(nq);
  std::vector<Neighbor> all(nd);
  for (std::size_t q = 0; q < nq; ++q) {
    const double* qv = queries.ptr() + q * d;
    for (std::size_t i = 0; i < nd; ++i) {
      const double* dv = database.ptr() + i * d;
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += qv[j] * dv[j];
      all[i] = {i, s};
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<long>(k), all.end(), before);
    out[q].assign(all.begin(), all.begin() + static_cast<long>(k));
  }
  return out;
}

RecallResult recall_at_n(const std::vector<std::vector<Neighbor>>& results, const DatasetManifest& manifest,
                         std::span<const std::size_t> query_rows, std::span<const std::size_t> db_rows,
                         std::vector<std::size_t> n_values, double threshold_m) {
  if (query_rows.empty()) throw std::invalid_argument("recall_at_n: empty query set");
  if (results.size() != query_rows.size()) throw std::invalid_argument("recall_at_n: result/query count mismatch");
  std::sort(n_values.begin(), n_values.end());
  n_values.erase(std::unique(n_values.begin(), n_values.end()), n_values.end());

  RecallResult r;
  r.n_values = n_values;
  r.threshold_m = threshold_m;
  std::vector<std::size_t> hits(n_values.size(), 0);
  for (std::size_t q = 0; q < query_rows.size(); ++q) {
    const ManifestRecord& query = manifest.records[query_rows[q]];
    QueryOutcome outcome;
    outcome.query_id = query.id;
    for (std::size_t db : db_rows) {
      if (same_place(query, manifest.records[db], threshold_m)) {
        outcome.has_ground_truth = true;
        break;
      }
    }
    for (std::size_t rank = 0; rank < results[q].size(); ++rank) {
      const ManifestRecord& cand = manifest.records[db_rows[results[q][rank].index]];
      outcome.top_ids.push_back(cand.id);
      if (outcome.first_hit_rank == 0 && same_place(query, cand, threshold_m)) outcome.first_hit_rank = rank + 1;
    }
    if (outcome.has_ground_truth) {
      ++r.evaluated;
      for (std::size_t i = 0; i < n_values.size(); ++i) {
        if (outcome.first_hit_rank != 0 && outcome.first_hit_rank <= n_values[i]) ++hits[i];
      }
    } else {
      ++r.excluded;
    }
    r.queries.push_back(std::move(outcome));
  }
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    r.recall.push_back(r.evaluated ? static_cast<double>(hits[i]) / static_cast<double>(r.evaluated) : 0.0);
  }
  return r;
}

nlohmann::json to_json(const RecallResult& r, const std::string& dataset, bool per_query) {
  nlohmann::json j;
  j["dataset"] = dataset;
  j["n_values"] = r.n_values;
  nlohmann::json recalls = nlohmann::json::object();
  for (std::size_t i = 0; i < r.n_values.size(); ++i) recalls["R@" + std::to_string(r.n_values[i])] = r.recall[i];
  j["recall"] = recalls;
  j["threshold_m"] = r.threshold_m;
  j["evaluated_queries"] = r.evaluated;
  j["excluded_queries"] = r.excluded;
  if (per_query) {
    nlohmann::json qs = nlohmann::json::array();
    for (const auto& q : r.queries) {
      qs.push_back({{"query", q.query_id},
                    {"has_ground_truth", q.has_ground_truth},
                    {"first_hit_rank", q.first_hit_rank},
                    {"top", q.top_ids}});
    }
    j["queries"] = qs;
  }
  return j;
}

void write_descriptors(const std::string& path, const Tensor& descriptors, std::size_t precision_bytes) {
  expect_rank(descriptors, 2, "write_descriptors");
  if (precision_bytes != 4 && precision_bytes != 8) throw std::invalid_argument("descriptor precision must be 4 or 8");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  binio::put_bytes(out, "LGCNDESC");
  binio::put_uint<std::uint32_t>(out, 1);
  binio::put_uint<std::uint64_t>(out, descriptors.dim(0));
  binio::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(descriptors.dim(1)));
  binio::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(precision_bytes));
  for (double v : descriptors.data()) {
    if (precision_bytes == 4) {
      binio::put_f32(out, static_cast<float>(v));
    } else {
      binio::put_f64(out, v);
    }
  }
}

Tensor read_descriptors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  if (binio::get_bytes(in, 8) != "LGCNDESC") throw std::runtime_error(path + ": not a descriptor dump");
  if (binio::get_uint<std::uint32_t>(in) != 1) throw std::runtime_error(path + ": unsupported version");
  const auto count = binio::get_uint<std::uint64_t>(in);
  const auto dim = binio::get_uint<std::uint32_t>(in);
  const auto prec = binio::get_uint<std::uint32_t>(in);
  if (prec != 4 && prec != 8) throw std::runtime_error(path + ": bad precision field");
  Tensor t({static_cast<std::size_t>(count), dim});
  for (double& v : t.data()) v = prec == 4 ? static_cast<double>(binio::get_f32(in)) : binio::get_f64(in);
  return t;
}

}  // namespace lgcn
