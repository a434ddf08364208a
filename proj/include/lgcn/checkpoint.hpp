#pragma once

#include <functional>
#include <string>

#include <nlohmann/json.hpp>

#include "lgcn/model.hpp"

namespace lgcn {

/// Archive layout (all integers little-endian):
///   "LGCNCKPT" | u32 version | u64 header length | JSON header
///   u64 entry count | entries...
/// entry: u32 name length | UTF-8 name | u32 rank | u64 dims[rank] | f64 data
/// The JSON header carries {"model": ModelConfig, "ablation": flags} plus
/// any caller-provided metadata under "meta".
std::string serialize_checkpoint(const LgcnModel& model, const nlohmann::json& meta = nlohmann::json::object());
void save_checkpoint(const std::string& path, const LgcnModel& model,
                     const nlohmann::json& meta = nlohmann::json::object());

struct LoadedCheckpoint {
  LgcnModel model;
  nlohmann::json header;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Entries only for parameters accepted by `select`, same entry encoding.
std::string serialize_params(const LgcnModel& model, const std::function<bool(const std::string&)>& select);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

}  // namespace lgcn
