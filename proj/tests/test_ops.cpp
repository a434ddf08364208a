#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lgcn/ops.hpp"
#include "lgcn/params.hpp"

using namespace lgcn;

namespace {

// Direct nested-loop convolution: every output element summed from scratch.
Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor* b, std::size_t stride, std::size_t pad) {
  const std::size_t H = x.dim(0), W = x.dim(1), Ci = x.dim(2), Co = k.dim(0), K = k.dim(2);
  const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  Tensor y({Ho, Wo, Co});
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t co = 0; co < Co; ++co) {
        double s = b ? (*b)[co] : 0.0;
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
              s += x.at(iy, ix, ci) * k[((co * Ci + ci) * K + ky) * K + kx];
            }
        y.at(oy, ox, co) = s;
      }
  return y;
}

double bilinear_oracle(const Tensor& x, std::size_t oh, std::size_t ow, std::size_t i, std::size_t j, std::size_t c) {
  const double H = static_cast<double>(x.dim(0)), W = static_cast<double>(x.dim(1));
  double sy = (static_cast<double>(i) + 0.5) * H / static_cast<double>(oh) - 0.5;
  double sx = (static_cast<double>(j) + 0.5) * W / static_cast<double>(ow) - 0.5;
  sy = std::clamp(sy, 0.0, H - 1.0);
  sx = std::clamp(sx, 0.0, W - 1.0);
  const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, x.dim(0) - 1), x1 = std::min(x0 + 1, x.dim(1) - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * x.at(y0, x0, c) + fx * x.at(y0, x1, c)) +
         fy * ((1 - fx) * x.at(y1, x0, c) + fx * x.at(y1, x1, c));
}

}  // namespace

TEST(Conv2d, ScalarMultiply) {
  Tensor x({1, 1, 1}, {2.0}), k({1, 1, 1, 1}, {3.0});
  EXPECT_EQ(ops::conv2d(x, k, nullptr, 1, 0)[0], 6.0);
}

TEST(Conv2d, OnesCountOverlap) {
  Tensor x({3, 3, 1}, 1.0), k({1, 1, 3, 3}, 1.0);
  Tensor y = ops::conv2d(x, k, nullptr, 1, 1);
  EXPECT_EQ(y.at(1, 1, 0), 9.0);
  EXPECT_EQ(y.at(0, 0, 0), 4.0);
  EXPECT_EQ(y.at(2, 2, 0), 4.0);
}

TEST(Conv2d, MatchesNestedLoop) {
  Rng rng(1);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
    Tensor x = randn({5, 5, 2}, 1.0, rng), k = randn({3, 2, 3, 3}, 1.0, rng), b = randn({3}, 1.0, rng);
    EXPECT_LT(max_abs_diff(ops::conv2d(x, k, &b, stride, pad), naive_conv(x, k, &b, stride, pad)), 1e-12);
  }
}

TEST(Conv2d, OutputShapeAndErrors) {
  Rng rng(2);
  Tensor y = ops::conv2d(randn({7, 6, 2}, 1.0, rng), randn({4, 2, 3, 3}, 1.0, rng), nullptr, 2, 1);
  EXPECT_EQ(y.shape(), (Shape{4, 3, 4}));
  try {
    ops::conv2d(randn({5, 5, 3}, 1.0, rng), randn({1, 2, 3, 3}, 1.0, rng), nullptr, 1, 0);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
  EXPECT_THROW(ops::conv2d(randn({2, 2, 1}, 1.0, rng), randn({1, 1, 3, 3}, 1.0, rng), nullptr, 1, 0), ShapeError);
}

TEST(Conv2d, LinearInInput) {
  Rng rng(3);
  Tensor a = randn({4, 4, 2}, 1.0, rng), b = randn({4, 4, 2}, 1.0, rng), k = randn({2, 2, 3, 3}, 1.0, rng);
  Tensor lhs = ops::conv2d(ops::add(a, b), k, nullptr, 1, 1);
  Tensor rhs = ops::add(ops::conv2d(a, k, nullptr, 1, 1), ops::conv2d(b, k, nullptr, 1, 1));
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(Depthwise, IdentityKernel) {
  Rng rng(4);
  Tensor x = randn({4, 5, 3}, 1.0, rng), k({3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) k[c * 9 + 4] = 1.0;
  EXPECT_EQ(ops::depthwise_conv2d(x, k, nullptr, 1), x);
}

TEST(Depthwise, ReducesToPerChannelConv) {
  Rng rng(5);
  Tensor x = randn({4, 4, 2}, 1.0, rng), k = randn({2, 3, 3}, 1.0, rng);
  Tensor y = ops::depthwise_conv2d(x, k, nullptr, 1);
  for (std::size_t c = 0; c < 2; ++c) {
    Tensor xc({4, 4, 1}), kc({1, 1, 3, 3});
    for (std::size_t i = 0; i < 16; ++i) xc[i] = x[i * 2 + c];
    for (std::size_t i = 0; i < 9; ++i) kc[i] = k[c * 9 + i];
    Tensor yc = naive_conv(xc, kc, nullptr, 1, 1);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y[i * 2 + c], yc[i], 1e-12);
  }
}

TEST(Depthwise, ChannelSeparability) {
  Rng rng(6);
  Tensor x = randn({4, 4, 2}, 1.0, rng), k = randn({2, 3, 3}, 1.0, rng);
  Tensor y0 = ops::depthwise_conv2d(x, k, nullptr, 1);
  x.at(1, 2, 0) += 3.0;
  Tensor y1 = ops::depthwise_conv2d(x, k, nullptr, 1);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(y0[i * 2 + 1], y1[i * 2 + 1]);
  EXPECT_THROW(ops::depthwise_conv2d(x, randn({3, 3, 3}, 1.0, rng), nullptr, 1), ShapeError);
}

TEST(Bilinear, ConstantPreserved) {
  Tensor x({3, 5, 2}, 7.0);
  const Tensor out = ops::bilinear_resize(x, 11, 4);
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 7.0);
}

TEST(Bilinear, CornersClampAndConvex) {
  Tensor x({2, 2, 1}, {0, 1, 2, 3});
  Tensor y = ops::bilinear_resize(x, 4, 4);
  EXPECT_EQ(y.at(0, 0, 0), 0.0);
  EXPECT_EQ(y.at(0, 3, 0), 1.0);
  EXPECT_EQ(y.at(3, 0, 0), 2.0);
  EXPECT_EQ(y.at(3, 3, 0), 3.0);
  for (double v : y.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 3.0);
  }
}

TEST(Bilinear, MatchesPixelFormula) {
  Rng rng(7);
  Tensor x = randn({7, 7, 3}, 1.0, rng);
  for (auto [oh, ow] : {std::pair<std::size_t, std::size_t>{14, 14}, {16, 16}, {5, 9}}) {
    Tensor y = ops::bilinear_resize(x, oh, ow);
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y.at(i, j, c), bilinear_oracle(x, oh, ow, i, j, c), 1e-12);
  }
}

TEST(AvgPool, MeanOfWindows) {
  Rng rng(8);
  Tensor x = randn({4, 4, 2}, 1.0, rng);
  Tensor y = ops::avg_pool(x, 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t c = 0; c < 2; ++c) {
        const double m = (x.at(2 * i, 2 * j, c) + x.at(2 * i + 1, 2 * j, c) + x.at(2 * i, 2 * j + 1, c) +
                          x.at(2 * i + 1, 2 * j + 1, c)) / 4.0;
        EXPECT_NEAR(y.at(i, j, c), m, 1e-15);
      }
  EXPECT_THROW(ops::avg_pool(x, 3), ShapeError);
}

TEST(Linear, MatchesLoops) {
  Rng rng(9);
  Tensor x = randn({3, 4}, 1.0, rng), w = randn({4, 5}, 1.0, rng), b = randn({5}, 1.0, rng);
  Tensor y = ops::linear(x, w, &b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t o = 0; o < 5; ++o) {
      double s = b[o];
      for (std::size_t k = 0; k < 4; ++k) s += x.at(i, k) * w.at(k, o);
      EXPECT_NEAR(y.at(i, o), s, 1e-12);
    }
}

TEST(LayerNorm, MatchesFormula) {
  Rng rng(10);
  Tensor x = randn({2, 6}, 2.0, rng), g = randn({6}, 1.0, rng), b = randn({6}, 1.0, rng);
  Tensor y = ops::layer_norm(x, g, b, nullptr);
  for (std::size_t r = 0; r < 2; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 6; ++c) mean += x.at(r, c) / 6.0;
    for (std::size_t c = 0; c < 6; ++c) var += (x.at(r, c) - mean) * (x.at(r, c) - mean) / 6.0;
    for (std::size_t c = 0; c < 6; ++c)
      EXPECT_NEAR(y.at(r, c), (x.at(r, c) - mean) / std::sqrt(var + 1e-6) * g[c] + b[c], 1e-12);
  }
}

TEST(Elementwise, ScalarForms) {
  Tensor x({5}, {-2.0, -0.5, 0.0, 0.5, 3.0});
  Tensor r = ops::relu(x), g = ops::gelu(x), s = ops::sigmoid(x), sp = ops::softplus(x);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(r[i], std::max(0.0, x[i]));
    EXPECT_NEAR(g[i], 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0))), 1e-15);
    EXPECT_NEAR(s[i], 1.0 / (1.0 + std::exp(-x[i])), 1e-15);
    EXPECT_NEAR(sp[i], std::log1p(std::exp(x[i])), 1e-15);
  }
  EXPECT_GT(ops::softplus_scalar(800.0), 799.0);
  EXPECT_TRUE(std::isfinite(ops::sigmoid_scalar(-800.0)));
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(11);
  Tensor x = randn({6, 7}, 5.0, rng);
  x.at(0, 0) = 700.0;
  Tensor y = ops::softmax(x);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GE(y.at(r, c), 0.0);
      s += y.at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  EXPECT_TRUE(y.all_finite());
}

TEST(L2Normalize, UnitNormAndDegenerate) {
  Rng rng(12);
  Tensor y = ops::l2_normalize(randn({9}, 3.0, rng));
  double n = 0;
  for (double v : y.data()) n += v * v;
  EXPECT_NEAR(n, 1.0, 1e-12);
  try {
    ops::l2_normalize(Tensor({4}));
    FAIL();
  } catch (const std::domain_error& e) {
    EXPECT_STREQ(e.what(), "degenerate descriptor");
  }
}

TEST(Attention, SingleTokenReturnsV) {
  Tensor q({1, 2}, {0.3, -1.0}), k({1, 2}, {2.0, 0.1}), v({1, 3}, {1.0, 2.0, 3.0});
  EXPECT_EQ(ops::attention(q, k, v, nullptr), v);
}

TEST(Attention, IdenticalKeysGiveColumnMean) {
  Rng rng(13);
  Tensor q = randn({4, 3}, 1.0, rng), v = randn({4, 2}, 1.0, rng);
  Tensor k({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) k.at(i, j) = 0.1 * static_cast<double>(j);
  Tensor y = ops::attention(q, k, v, nullptr);
  for (std::size_t c = 0; c < 2; ++c) {
    const double mean = (v.at(0, c) + v.at(1, c) + v.at(2, c) + v.at(3, c)) / 4.0;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.at(i, c), mean, 1e-12);
  }
}

TEST(Attention, HandComputedThreeTokens) {
  Rng rng(14);
  Tensor q = randn({3, 2}, 1.0, rng), k = randn({3, 2}, 1.0, rng), v = randn({3, 2}, 1.0, rng);
  ops::AttentionCache cache;
  Tensor y = ops::attention(q, k, v, &cache);
  for (std::size_t i = 0; i < 3; ++i) {
    double e[3], z = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      e[j] = std::exp((q.at(i, 0) * k.at(j, 0) + q.at(i, 1) * k.at(j, 1)) / std::sqrt(2.0));
      z += e[j];
    }
    double rowsum = 0;
    for (std::size_t c = 0; c < 2; ++c) {
      const double expect = (e[0] * v.at(0, c) + e[1] * v.at(1, c) + e[2] * v.at(2, c)) / z;
      EXPECT_NEAR(y.at(i, c), expect, 1e-12);
    }
    for (std::size_t j = 0; j < 3; ++j) rowsum += cache.weights.at(i, j);
    EXPECT_NEAR(rowsum, 1.0, 1e-12);
  }
}

TEST(Gemm, TransposeVariants) {
  Rng rng(15);
  Tensor a = randn({3, 4}, 1.0, rng), b = randn({4, 2}, 1.0, rng);
  Tensor at({4, 3}), bt({2, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) at.at(j, i) = a.at(i, j);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) bt.at(j, i) = b.at(i, j);
  Tensor c1({3, 2}), c2({3, 2});
  ops::gemm(false, false, 3, 2, 4, a.ptr(), b.ptr(), c1.ptr(), 0.0);
  ops::gemm(true, true, 3, 2, 4, at.ptr(), bt.ptr(), c2.ptr(), 0.0);
  EXPECT_LT(max_abs_diff(c1, c2), 1e-12);
}

// Small random shapes against the loop references.
TEST(Property, OperatorsMatchReferencesOnRandomShapes) {
  Rng rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 3 + rng.index(6), w = 3 + rng.index(6), c = 1 + rng.index(4);
    Tensor x = randn({h, w, c}, 1.0, rng), k = randn({1 + rng.index(3), c, 3, 3}, 1.0, rng);
    EXPECT_LT(max_abs_diff(ops::conv2d(x, k, nullptr, 1, 1), naive_conv(x, k, nullptr, 1, 1)), 1e-10);
    const std::size_t oh = 1 + rng.index(8), ow = 1 + rng.index(8);
    Tensor y = ops::bilinear_resize(x, oh, ow);
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t ch = 0; ch < c; ++ch) ASSERT_NEAR(y.at(i, j, ch), bilinear_oracle(x, oh, ow, i, j, ch), 1e-10);
  }
}
