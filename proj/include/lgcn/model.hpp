#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgcn/cnn.hpp"
#include "lgcn/config.hpp"
#include "lgcn/dfm.hpp"
#include "lgcn/fsa.hpp"
#include "lgcn/head.hpp"
#include "lgcn/vit.hpp"

namespace lgcn {

/// Intermediate values of one image's pass through both streams, the fusion
/// and regional pooling. Also what the heatmap diagnostics read.
struct ImageTrace {
  Tensor f_vit;     // G x G x D
  Tensor f_res;     // aligned CNN stream G x G x D (empty without the CNN stream)
  Tensor omega;     // gate weights (empty unless the learned gate ran)
  Tensor fused;     // G x G x C_fused
  Tensor pooled;    // R x C_fused

  VitCache vit;
  CnnCache cnn;
  Tensor cnn_out;
  AlignCache align;
  DfmCache dfm;
  PoolCache pool;
};

struct BatchTrace {
  std::vector<ImageTrace> images;
  Tensor pooled;  // B x R x C
  bool cross_image = false;
  std::vector<CorrelateCache> correlate;  // one when cross-image, else one per image
  Tensor correlated;                      // B x R x C
  Tensor descriptors;                     // B x D_out
};

/// The complete two-stream network with ablation switches.
class LgcnModel {
 public:
  LgcnModel(ModelConfig cfg, AblationFlags flags, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const AblationFlags& flags() const { return flags_; }
  /// Flags may change after construction only if the fused width stays equal.
  void set_flags(const AblationFlags& flags);

  std::size_t fused_channels() const;
  std::size_t descriptor_dim() const { return kRegions * fused_channels(); }

  /// Every parameter in a fixed order; names are prefixed vit., fsa.<i>.,
  /// cnn., dfm., head.
  void visit_params(const ParamVisitor& f);
  void visit_params(const ConstParamVisitor& f) const;
  static bool is_backbone(const std::string& name);
  void zero_grad();
  std::size_t parameter_count() const;

  Tensor forward_image(const Tensor& image, ImageTrace* trace) const;
  void backward_image(const ImageTrace& trace, const Tensor& dpooled, bool backbone_grads);

  /// Inference path: the image alone (B = 1) through the head.
  Tensor describe(const Tensor& image) const;
  /// Inference over many images, optionally on several threads. Output is
  /// independent of the thread count.
  Tensor describe_all(const std::vector<Tensor>& images, std::size_t threads = 1) const;

  /// Training path. With `cross_image` all B*R region tokens share one
  /// attention layer; otherwise each image goes through the head alone.
  Tensor forward_batch(const std::vector<const Tensor*>& images, bool cross_image, BatchTrace* trace) const;
  void backward_batch(const BatchTrace& trace, const Tensor& ddescriptors, bool backbone_grads);

  VitParams vit;
  std::vector<FsaParams> adapters;
  CnnParams cnn;
  DfmParams dfm;
  HeadParams head;

 private:
  ModelConfig cfg_;
  AblationFlags flags_;
};

}  // namespace lgcn
