#pragma once

#include <string>

#include "lgcn/config.hpp"
#include "lgcn/params.hpp"

namespace lgcn {

/// Three stride-2 3x3 conv + ReLU stages, an average pool down to G_res, and
/// the alignment conv used by the upsampler.
struct CnnParams {
  Param k1, b1;  // width1 x 3 x 3 x 3
  Param k2, b2;  // width2 x width1 x 3 x 3
  Param k3, b3;  // C_res x width2 x 3 x 3
  Param align_k, align_b;  // D x C_res x 3 x 3

  static CnnParams init(const ModelConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct CnnCache {
  Tensor image;
  Tensor pre1, act1, pre2, act2, pre3, act3;
};

/// image (S x S x 3) -> F_Res (G_res x G_res x C_res).
Tensor cnn_forward(const Tensor& image, const CnnParams& p, const ModelConfig& cfg, CnnCache* cache);
void cnn_backward(CnnParams& p, const ModelConfig& cfg, const CnnCache& cache, const Tensor& dout);

struct AlignCache {
  Tensor resized;  // align_side x align_side x C_res
  Tensor conv;     // align_side x align_side x D
  Shape input_shape;
};

/// Bilinear to align_side, 3x3 conv C_res -> D, bilinear to G: F'_Res.
Tensor align_upsample(const Tensor& f_res, const CnnParams& p, const ModelConfig& cfg, AlignCache* cache);
/// Returns dL/dF_Res; accumulates alignment conv gradients.
Tensor align_upsample_backward(CnnParams& p, const AlignCache& cache, const Tensor& dout, bool need_dx = true);

}  // namespace lgcn
