#include "lgcn/checkpoint.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "lgcn/binio.hpp"

namespace lgcn {

namespace {

constexpr std::uint32_t kVersion = 1;

void write_entry(std::ostream& out, const std::string& name, const Tensor& t) {
  binio::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  binio::put_bytes(out, name);
  binio::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) binio::put_uint<std::uint64_t>(out, d);
  for (double v : t.data()) binio::put_f64(out, v);
}

void write_entries(std::ostream& out, const LgcnModel& model, const std::function<bool(const std::string&)>& select) {
  std::uint64_t count = 0;
  model.visit_params(ConstParamVisitor([&](const std::string& n, const Param&) { count += select(n) ? 1 : 0; }));
  binio::put_uint<std::uint64_t>(out, count);
  model.visit_params(ConstParamVisitor([&](const std::string& n, const Param& p) {
    if (select(n)) write_entry(out, n, p.value);
  }));
}

}  // namespace

std::string serialize_params(const LgcnModel& model, const std::function<bool(const std::string&)>& select) {
  std::ostringstream out(std::ios::binary);
  write_entries(out, model, select);
  return out.str();
}

std::string serialize_checkpoint(const LgcnModel& model, const nlohmann::json& meta) {
  std::ostringstream out(std::ios::binary);
  nlohmann::json header{{"model", to_json(model.config())}, {"ablation", to_json(model.flags())}, {"meta", meta}};
  const std::string text = header.dump();
  binio::put_bytes(out, "LGCNCKPT");
  binio::put_uint<std::uint32_t>(out, kVersion);
  binio::put_uint<std::uint64_t>(out, text.size());
  binio::put_bytes(out, text);
  write_entries(out, model, [](const std::string&) { return true; });
  return out.str();
}

void save_checkpoint(const std::string& path, const LgcnModel& model, const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(model, meta);
  out.write(bytes.data(), static_cast<long>(bytes.size()));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  if (binio::get_bytes(in, 8) != "LGCNCKPT") throw std::runtime_error(path + ": not a checkpoint");
  if (binio::get_uint<std::uint32_t>(in) != kVersion) throw std::runtime_error(path + ": unsupported version");
  const auto header_len = binio::get_uint<std::uint64_t>(in);
  nlohmann::json header = nlohmann::json::parse(binio::get_bytes(in, header_len));

  std::map<std::string, Tensor> entries;
  const auto count = binio::get_uint<std::uint64_t>(in);
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::string name = binio::get_bytes(in, binio::get_uint<std::uint32_t>(in));
    Shape shape(binio::get_uint<std::uint32_t>(in));
    for (auto& d : shape) d = binio::get_uint<std::uint64_t>(in);
    Tensor t(shape);
    for (double& v : t.data()) v = binio::get_f64(in);
    entries.emplace(name, std::move(t));
  }

  LgcnModel model(model_config_from_json(header.at("model")), ablation_from_json(header.at("ablation")), 0);
  std::size_t matched = 0;
  model.visit_params([&](const std::string& n, Param& p) {
    auto it = entries.find(n);
    if (it == entries.end()) throw std::runtime_error(path + ": missing parameter " + n);
    if (it->second.shape() != p.value.shape()) {
      throw std::runtime_error(path + ": parameter " + n + " has shape " + shape_str(it->second.shape()) +
                               ", model expects " + shape_str(p.value.shape()));
    }
    p.value = it->second;
    ++matched;
  });
  if (matched != entries.size()) throw std::runtime_error(path + ": checkpoint holds unknown parameters");
  return {std::move(model), std::move(header)};
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace lgcn
