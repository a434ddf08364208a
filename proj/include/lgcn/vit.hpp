#pragma once

#include <string>
#include <vector>

#include "lgcn/config.hpp"
#include "lgcn/fsa.hpp"
#include "lgcn/mhsa.hpp"
#include "lgcn/ops.hpp"

namespace lgcn {

/// Pre-norm transformer block with an FFN (expansion 4, GELU).
struct VitBlock {
  Param ln1_g, ln1_b;
  Mhsa attn;
  Param ln2_g, ln2_b;
  Param fc1_w, fc1_b;  // D x 4D
  Param fc2_w, fc2_b;  // 4D x D

  static VitBlock init(const ModelConfig& cfg, Rng& rng);
  std::size_t parameter_count() const;
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct VitParams {
  Param patch_w;  // (P*P*3) x D
  Param patch_b;  // D
  Param cls;      // D
  Param pos;      // (1 + G^2) x D
  std::vector<VitBlock> blocks;

  static VitParams init(const ModelConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

/// Flattens each P x P x 3 patch (row, column, channel order), projects it to
/// D, prepends the class token and adds positional embeddings.
Tensor patch_embed(const Tensor& image, const VitParams& p, const ModelConfig& cfg);
void patch_embed_backward(const Tensor& image, VitParams& p, const ModelConfig& cfg, const Tensor& dtokens);

/// Patch tokens (class token dropped) as a G x G x D map, and the inverse.
Tensor tokens_to_map(const Tensor& tokens, std::size_t grid);
Tensor map_to_tokens(const Tensor& map, const Tensor& cls_row);

struct BlockCache {
  Tensor x_in;
  ops::LayerNormCache ln1;
  MhsaCache attn;
  Tensor x_mid;
  ops::LayerNormCache ln2;
  Tensor u;  // LN2 output shared by FFN and adapter
  Tensor fc1_out;
  Tensor gelu_out;
  bool has_adapter = false;
  FsaCache fsa;
};

/// x <- x + MHSA(LN1(x)); u = LN2(x); x <- x + FFN(u) + FSA(u).
Tensor vit_block_forward(const VitBlock& b, const FsaParams* adapter, const Tensor& x, std::size_t grid,
                         BlockCache* cache);
/// Returns dL/dx. Backbone gradients accumulate only when `backbone_grads`;
/// adapter gradients always accumulate.
Tensor vit_block_backward(VitBlock& b, FsaParams* adapter, const BlockCache& cache, const Tensor& dy,
                          bool backbone_grads);

struct VitCache {
  Tensor image;
  std::vector<BlockCache> blocks;
  Tensor cls_out;
};

/// Full branch. `adapters` is empty or holds one entry per block.
/// Returns F_ViT as a G x G x D map.
Tensor vit_forward(const Tensor& image, const VitParams& p, const std::vector<FsaParams>* adapters,
                   const ModelConfig& cfg, VitCache* cache);
void vit_backward(VitParams& p, std::vector<FsaParams>* adapters, const ModelConfig& cfg, const VitCache& cache,
                  const Tensor& dmap, bool backbone_grads);

}  // namespace lgcn
