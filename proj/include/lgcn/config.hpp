#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace lgcn {

enum class DfmMode { kCrossStream, kVitOnly };

std::string to_string(DfmMode mode);
DfmMode dfm_mode_from_string(const std::string& s);

/// Dimensional hyperparameters of the whole network.
struct ModelConfig {
  std::string preset = "toy";
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t grid = 8;  // ViT token grid side, image_size / patch_size
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t depth = 4;
  std::size_t cnn_width1 = 24;  // first two conv stage widths
  std::size_t cnn_width2 = 48;
  std::size_t cnn_channels = 96;  // C_res
  std::size_t cnn_grid = 4;       // G_res
  std::size_t align_side = 6;     // intermediate bilinear target of the upsampler
  double adapter_ratio = 0.375;
  double adapter_scale = 0.1;
  double gem_p = 3.0;

  static ModelConfig toy();
  static ModelConfig paper();
  static ModelConfig from_preset(const std::string& name);

  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t tokens() const { return grid * grid + 1; }
  std::size_t adapter_channels() const;
  std::size_t gate_hidden() const { return (embed_dim + 3) / 4; }
  std::size_t cnn_pool() const { return image_size / 8 / cnn_grid; }

  /// Throws std::invalid_argument naming the first inconsistent field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Component switches reproducing the ablation variants.
struct AblationFlags {
  bool disable_fsa = false;
  bool disable_cnn_stream = false;
  bool disable_dfm = false;    // with the CNN stream on: channel concatenation instead of DFM
  bool static_fusion = false;  // fixed 0.5/0.5 summation instead of the learned gate
  DfmMode dfm_mode = DfmMode::kCrossStream;

  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;  // triplets per optimizer step
  std::size_t epochs = 5;
  double margin = 0.1;
  std::size_t negatives = 1;  // mined hard negatives per anchor
  std::uint64_t seed = 0;
  bool freeze_backbone = true;
  bool cross_image = true;

  static TrainConfig toy() { return {}; }
  static TrainConfig paper();
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Everything a CLI run is configured by; the JSON form is
/// {"model": {...}, "train": {...}, "ablation": {...}}, each part optional.
struct RunConfig {
  ModelConfig model = ModelConfig::toy();
  TrainConfig train;
  AblationFlags ablation;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const AblationFlags& flags);
nlohmann::json to_json(const TrainConfig& cfg);

// Unknown keys are rejected; absent keys keep the value already in `base`.
ModelConfig model_config_from_json(const nlohmann::json& j);
AblationFlags ablation_from_json(const nlohmann::json& j, AblationFlags base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

}  // namespace lgcn
