#include "lgcn/config.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace lgcn {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* section) {
  if (!j.is_object()) throw std::invalid_argument(std::string(section) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw std::invalid_argument(std::string(section) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::string to_string(DfmMode mode) { return mode == DfmMode::kCrossStream ? "cross-stream" : "vit-only"; }

DfmMode dfm_mode_from_string(const std::string& s) {
  if (s == "cross-stream") return DfmMode::kCrossStream;
  if (s == "vit-only") return DfmMode::kVitOnly;
  throw std::invalid_argument("unknown dfm mode '" + s + "' (expected cross-stream or vit-only)");
}

ModelConfig ModelConfig::toy() { return {}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.image_size = 224;
  c.patch_size = 14;
  c.grid = 16;
  c.embed_dim = 768;
  c.heads = 12;
  c.depth = 12;
  c.cnn_width1 = 64;
  c.cnn_width2 = 256;
  c.cnn_channels = 1024;
  c.cnn_grid = 7;
  c.align_side = 14;
  c.adapter_ratio = 0.5;
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown preset '" + name + "' (expected toy or paper)");
}

std::size_t ModelConfig::adapter_channels() const {
  return static_cast<std::size_t>(std::ceil(adapter_ratio * static_cast<double>(embed_dim) - 1e-9));
}

void ModelConfig::validate() const {
  require(patch_size >= 1 && image_size % patch_size == 0, "image_size must be divisible by patch_size");
  require(grid == image_size / patch_size, "grid must equal image_size / patch_size");
  require(grid % 2 == 0, "grid must be even (regional pooling splits it in half)");
  require(heads >= 1 && embed_dim % heads == 0, "embed_dim must be divisible by heads");
  require(depth >= 1, "depth must be >= 1");
  require(image_size % 8 == 0, "image_size must be divisible by 8 (three stride-2 stages)");
  require(cnn_grid >= 1 && (image_size / 8) % cnn_grid == 0, "cnn_grid must divide image_size / 8");
  require(cnn_width1 >= 1 && cnn_width2 >= 1 && cnn_channels >= 1, "cnn widths must be positive");
  require(align_side >= cnn_grid && align_side <= grid, "align_side must lie between cnn_grid and grid");
  require(adapter_ratio > 0.0 && adapter_ratio <= 1.0, "adapter_ratio must lie in (0, 1]");
  require(gem_p >= 1.0, "gem_p must be >= 1");
}

TrainConfig TrainConfig::paper() {
  TrainConfig t;
  t.learning_rate = 1e-5;
  t.batch_size = 16;
  return t;
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0, "learning_rate must be >= 0");
  require(margin >= 0.0, "margin must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(negatives >= 1, "negatives must be >= 1");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
}

json to_json(const ModelConfig& c) {
  return json{{"preset", c.preset},         {"image_size", c.image_size},
              {"patch_size", c.patch_size}, {"grid", c.grid},
              {"embed_dim", c.embed_dim},   {"heads", c.heads},
              {"depth", c.depth},           {"cnn_width1", c.cnn_width1},
              {"cnn_width2", c.cnn_width2}, {"cnn_channels", c.cnn_channels},
              {"cnn_grid", c.cnn_grid},     {"align_side", c.align_side},
              {"adapter_ratio", c.adapter_ratio}, {"adapter_scale", c.adapter_scale},
              {"gem_p", c.gem_p}};
}

json to_json(const AblationFlags& f) {
  return json{{"disable_fsa", f.disable_fsa},
              {"disable_cnn_stream", f.disable_cnn_stream},
              {"disable_dfm", f.disable_dfm},
              {"static_fusion", f.static_fusion},
              {"dfm_mode", to_string(f.dfm_mode)}};
}

json to_json(const TrainConfig& t) {
  return json{{"learning_rate", t.learning_rate}, {"beta1", t.beta1},     {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},           {"batch_size", t.batch_size}, {"epochs", t.epochs},
              {"margin", t.margin},               {"negatives", t.negatives},   {"seed", t.seed},
              {"freeze_backbone", t.freeze_backbone}, {"cross_image", t.cross_image}};
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j,
                 {"preset", "image_size", "patch_size", "grid", "embed_dim", "heads", "depth", "cnn_width1",
                  "cnn_width2", "cnn_channels", "cnn_grid", "align_side", "adapter_ratio", "adapter_scale", "gem_p"},
                 "model");
  const std::string preset = j.value("preset", std::string("toy"));
  ModelConfig c;
  if (preset == "toy" || preset == "paper") {
    c = ModelConfig::from_preset(preset);
  } else {
    // a custom label carries no defaults, so every field must be spelled out
    if (j.size() != 15) throw std::invalid_argument("unknown preset '" + preset + "' (expected toy or paper)");
    c.preset = preset;
  }
  read(j, "image_size", c.image_size);
  read(j, "patch_size", c.patch_size);
  read(j, "grid", c.grid);
  read(j, "embed_dim", c.embed_dim);
  read(j, "heads", c.heads);
  read(j, "depth", c.depth);
  read(j, "cnn_width1", c.cnn_width1);
  read(j, "cnn_width2", c.cnn_width2);
  read(j, "cnn_channels", c.cnn_channels);
  read(j, "cnn_grid", c.cnn_grid);
  read(j, "align_side", c.align_side);
  read(j, "adapter_ratio", c.adapter_ratio);
  read(j, "adapter_scale", c.adapter_scale);
  read(j, "gem_p", c.gem_p);
  c.validate();
  return c;
}

AblationFlags ablation_from_json(const json& j, AblationFlags f) {
  reject_unknown(j, {"disable_fsa", "disable_cnn_stream", "disable_dfm", "static_fusion", "dfm_mode"}, "ablation");
  read(j, "disable_fsa", f.disable_fsa);
  read(j, "disable_cnn_stream", f.disable_cnn_stream);
  read(j, "disable_dfm", f.disable_dfm);
  read(j, "static_fusion", f.static_fusion);
  if (j.contains("dfm_mode")) f.dfm_mode = dfm_mode_from_string(j.at("dfm_mode").get<std::string>());
  return f;
}

TrainConfig train_config_from_json(const json& j, TrainConfig t) {
  reject_unknown(j,
                 {"learning_rate", "beta1", "beta2", "adam_eps", "batch_size", "epochs", "margin", "negatives", "seed",
                  "freeze_backbone", "cross_image"},
                 "train");
  read(j, "learning_rate", t.learning_rate);
  read(j, "beta1", t.beta1);
  read(j, "beta2", t.beta2);
  read(j, "adam_eps", t.adam_eps);
  read(j, "batch_size", t.batch_size);
  read(j, "epochs", t.epochs);
  read(j, "margin", t.margin);
  read(j, "negatives", t.negatives);
  read(j, "seed", t.seed);
  read(j, "freeze_backbone", t.freeze_backbone);
  read(j, "cross_image", t.cross_image);
  t.validate();
  return t;
}

json to_json(const RunConfig& cfg) {
  return {{"model", to_json(cfg.model)}, {"train", to_json(cfg.train)}, {"ablation", to_json(cfg.ablation)}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  reject_unknown(j, {"model", "train", "ablation"}, "config");
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("ablation")) c.ablation = ablation_from_json(j.at("ablation"));
  return c;
}

}  // namespace lgcn
