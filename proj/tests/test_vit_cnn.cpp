#include <gtest/gtest.h>

#include <numeric>

#include "lgcn/cnn.hpp"
#include "lgcn/ops.hpp"
#include "lgcn/vit.hpp"

using namespace lgcn;

TEST(PatchEmbed, ToyShape) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(1);
  const VitParams p = VitParams::init(cfg, rng);
  Tensor t = patch_embed(randu({64, 64, 3}, 0, 1, rng), p, cfg);
  EXPECT_EQ(t.shape(), (Shape{65, 64}));
  EXPECT_THROW(patch_embed(Tensor({32, 32, 3}), p, cfg), ShapeError);
}

TEST(PatchEmbed, ZeroImageGivesPositions) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(2);
  VitParams p = VitParams::init(cfg, rng);
  p.patch_w.value.fill(0.0);
  p.patch_b.value.fill(0.0);
  Tensor t = patch_embed(Tensor({64, 64, 3}), p, cfg);
  for (std::size_t r = 1; r < cfg.tokens(); ++r)
    for (std::size_t d = 0; d < cfg.embed_dim; ++d) EXPECT_EQ(t.at(r, d), p.pos.value.at(r, d));
  for (std::size_t d = 0; d < cfg.embed_dim; ++d) EXPECT_EQ(t.at(0, d), p.cls.value[d] + p.pos.value.at(0, d));
}

TEST(PatchEmbed, FlattensRowColumnChannel) {
  ModelConfig cfg = ModelConfig::toy();
  Rng rng(3);
  VitParams p = VitParams::init(cfg, rng);
  Tensor image = randu({64, 64, 3}, 0, 1, rng);
  Tensor t = patch_embed(image, p, cfg);
  // patch (1, 2): rows 8..15, columns 16..23
  const std::size_t P = cfg.patch_size, tok = 1 + 1 * cfg.grid + 2;
  for (std::size_t d = 0; d < 4; ++d) {
    double s = p.patch_b.value[d] + p.pos.value.at(tok, d);
    for (std::size_t py = 0; py < P; ++py)
      for (std::size_t px = 0; px < P; ++px)
        for (std::size_t c = 0; c < 3; ++c)
          s += image.at(P + py, 2 * P + px, c) * p.patch_w.value.at((py * P + px) * 3 + c, d);
    EXPECT_NEAR(t.at(tok, d), s, 1e-12);
  }
}

TEST(Tokens, MapRoundTrip) {
  Rng rng(4);
  Tensor tokens = randn({17, 5}, 1.0, rng);
  Tensor map = tokens_to_map(tokens, 4);
  EXPECT_EQ(map.shape(), (Shape{4, 4, 5}));
  Tensor cls({5});
  for (std::size_t d = 0; d < 5; ++d) cls[d] = tokens.at(0, d);
  EXPECT_EQ(map_to_tokens(map, cls), tokens);
}

TEST(Vit, ForwardShapeAndZeroAdapters) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(5);
  const VitParams p = VitParams::init(cfg, rng);
  std::vector<FsaParams> adapters;
  for (std::size_t i = 0; i < cfg.depth; ++i) adapters.push_back(FsaParams::init(cfg, rng));
  Tensor image = randu({64, 64, 3}, 0, 1, rng);
  Tensor plain = vit_forward(image, p, nullptr, cfg, nullptr);
  EXPECT_EQ(plain.shape(), (Shape{8, 8, 64}));
  EXPECT_EQ(vit_forward(image, p, &adapters, cfg, nullptr), plain);
  adapters.pop_back();
  EXPECT_THROW(vit_forward(image, p, &adapters, cfg, nullptr), std::invalid_argument);
}

TEST(Vit, AttentionRowsSumToOne) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(6);
  const VitParams p = VitParams::init(cfg, rng);
  VitCache cache;
  vit_forward(randu({64, 64, 3}, 0, 1, rng), p, nullptr, cfg, &cache);
  for (const auto& b : cache.blocks)
    for (const auto& a : b.attn.att)
      for (std::size_t r = 0; r < a.weights.dim(0); ++r) {
        double s = 0;
        for (std::size_t c = 0; c < a.weights.dim(1); ++c) s += a.weights.at(r, c);
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
}

TEST(Vit, PermutationEquivariance) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(7);
  VitParams p = VitParams::init(cfg, rng);
  Tensor image = randu({64, 64, 3}, 0, 1, rng);
  const std::size_t n = cfg.grid * cfg.grid, P = cfg.patch_size, G = cfg.grid;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng.engine());

  // patch slot i of the permuted image holds original patch perm[i]
  Tensor image2(image.shape());
  VitParams p2 = p;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = perm[i];
    for (std::size_t y = 0; y < P; ++y)
      for (std::size_t x = 0; x < P; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          image2.at((i / G) * P + y, (i % G) * P + x, c) = image.at((src / G) * P + y, (src % G) * P + x, c);
    for (std::size_t d = 0; d < cfg.embed_dim; ++d) p2.pos.value.at(i + 1, d) = p.pos.value.at(src + 1, d);
  }
  Tensor a = vit_forward(image, p, nullptr, cfg, nullptr);
  Tensor b = vit_forward(image2, p2, nullptr, cfg, nullptr);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < cfg.embed_dim; ++d) EXPECT_NEAR(b[i * cfg.embed_dim + d], a[perm[i] * cfg.embed_dim + d], 1e-9);
}

TEST(Vit, FrozenBackwardLeavesBackboneGradsZero) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(8);
  VitParams p = VitParams::init(cfg, rng);
  std::vector<FsaParams> adapters;
  for (std::size_t i = 0; i < cfg.depth; ++i) adapters.push_back(FsaParams::init(cfg, rng));
  VitCache cache;
  Tensor out = vit_forward(randu({64, 64, 3}, 0, 1, rng), p, &adapters, cfg, &cache);
  vit_backward(p, &adapters, cfg, cache, randn(out.shape(), 1.0, rng), false);
  p.visit("vit", [](const std::string& name, Param& q) {
    for (double g : q.grad.data()) ASSERT_EQ(g, 0.0) << name;
  });
  double adapter_norm = 0;
  for (auto& a : adapters)
    a.visit("fsa", [&](const std::string&, Param& q) {
      for (double g : q.grad.data()) adapter_norm += g * g;
    });
  EXPECT_GT(adapter_norm, 0.0);
}

TEST(Cnn, ToyShapes) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(9);
  const CnnParams p = CnnParams::init(cfg, rng);
  CnnCache cache;
  Tensor f = cnn_forward(randu({64, 64, 3}, 0, 1, rng), p, cfg, &cache);
  EXPECT_EQ(cache.act1.shape(), (Shape{32, 32, cfg.cnn_width1}));
  EXPECT_EQ(cache.act2.shape(), (Shape{16, 16, cfg.cnn_width2}));
  EXPECT_EQ(cache.act3.shape(), (Shape{8, 8, 96}));
  EXPECT_EQ(f.shape(), (Shape{4, 4, 96}));
  AlignCache ac;
  Tensor a = align_upsample(f, p, cfg, &ac);
  EXPECT_EQ(ac.resized.shape(), (Shape{6, 6, 96}));
  EXPECT_EQ(ac.conv.shape(), (Shape{6, 6, 64}));
  EXPECT_EQ(a.shape(), (Shape{8, 8, 64}));
}

TEST(Cnn, ZeroImageZeroBiasGivesZero) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(10);
  CnnParams p = CnnParams::init(cfg, rng);
  for (Param* b : {&p.b1, &p.b2, &p.b3}) b->value.fill(0.0);
  const Tensor out = cnn_forward(Tensor({64, 64, 3}), p, cfg, nullptr);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Align, ConstantPreservedByIdentityConv) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.cnn_channels = cfg.embed_dim;
  Rng rng(11);
  CnnParams p = CnnParams::init(cfg, rng);
  p.align_k.value.fill(0.0);
  p.align_b.value.fill(0.0);
  const std::size_t D = cfg.embed_dim;
  for (std::size_t c = 0; c < D; ++c) p.align_k.value[((c * D + c) * 3 + 1) * 3 + 1] = 1.0;
  Tensor f({4, 4, D}, 2.5);
  const Tensor out = align_upsample(f, p, cfg, nullptr);
  for (double v : out.data()) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(Align, SuperpositionWithZeroBias) {
  const ModelConfig cfg = ModelConfig::toy();
  Rng rng(12);
  CnnParams p = CnnParams::init(cfg, rng);
  p.align_b.value.fill(0.0);
  Tensor a = randn({4, 4, 96}, 1.0, rng), b = randn({4, 4, 96}, 1.0, rng);
  Tensor lhs = align_upsample(ops::add(a, b), p, cfg, nullptr);
  Tensor rhs = ops::add(align_upsample(a, p, cfg, nullptr), align_upsample(b, p, cfg, nullptr));
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-9);
}

TEST(Align, RejectsBadIntermediateSide) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.align_side = 9;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(PaperPreset, ShapeParity) {
  const ModelConfig cfg = ModelConfig::paper();
  Rng rng(13);
  EXPECT_EQ(cfg.grid, 16u);
  EXPECT_EQ(cfg.tokens(), 257u);
  const CnnParams p = CnnParams::init(cfg, rng);
  Tensor image = randu({224, 224, 3}, 0, 1, rng);
  Tensor f = cnn_forward(image, p, cfg, nullptr);
  EXPECT_EQ(f.shape(), (Shape{7, 7, 1024}));
  AlignCache ac;
  Tensor a = align_upsample(f, p, cfg, &ac);
  EXPECT_EQ(ac.resized.shape(), (Shape{14, 14, 1024}));
  EXPECT_EQ(ac.conv.shape(), (Shape{14, 14, 768}));
  EXPECT_EQ(a.shape(), (Shape{16, 16, 768}));
}
