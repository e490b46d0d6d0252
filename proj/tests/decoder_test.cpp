#include "refseg/backbone.hpp"
#include "refseg/decoder.hpp"
#include "refseg/grad_check.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace refseg {
namespace {

using TD = Tensor<double>;

TD normal(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Buffer<double> v(element_count(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
  return TD(std::move(shape), std::move(v));
}

TEST(SpatialAttentionTest, ZeroParamsHalve) {
  Rng rng(1);
  const TD m = normal({3, 5, 5}, rng);
  const SpatialAttentionParams<double> p{TD::zeros({1, 3, 7, 7}), TD::zeros({1})};
  const TD out = spatial_attention(m, p);
  for (Index i = 0; i < m.size(); ++i) EXPECT_EQ(out[i], 0.5 * m[i]);
}

TEST(SpatialAttentionTest, LargeBiasPassesThrough) {
  Rng rng(2);
  const TD m = normal({3, 5, 5}, rng);
  const SpatialAttentionParams<double> p{normal({1, 3, 7, 7}, rng, 0.01), TD::scalar(100.0)};
  EXPECT_LE((spatial_attention(m, p).values() - m.values()).abs().maxCoeff(), 1e-12);
}

TEST(SpatialAttentionTest, MatchesPrimitives) {
  Rng rng(3);
  const TD m = normal({4, 6, 6}, rng);
  const SpatialAttentionParams<double> p{normal({1, 4, 7, 7}, rng, 0.2), normal({1}, rng)};
  const TD gate = sigmoid(conv2d(m, p.kernel, p.bias, 3));
  const TD out = spatial_attention(m, p);
  for (Index c = 0; c < 4; ++c)
    for (Index y = 0; y < 6; ++y)
      for (Index x = 0; x < 6; ++x) EXPECT_EQ(out.at({c, y, x}), gate.at({0, y, x}) * m.at({c, y, x}));
}

TEST(DecodeTest, SingleLevelIsOneStep) {
  Rng rng(4);
  const auto p = ConvLstmParams<double>::init(3, 2, 3, rng);
  const std::vector<TD> levels{normal({3, 4, 4}, rng)};
  const auto out = decode(std::span<const TD>(levels), p);
  const auto want = convlstm_step(levels[0], RecurrentState<double>::zeros({2, 4, 4}), p);
  EXPECT_TRUE((out.final_hidden.values() == want.hidden.values()).all());
}

TEST(DecodeTest, RepeatedLevelsEqualRepeatedSteps) {
  Rng rng(5);
  const auto p = ConvLstmParams<double>::init(3, 2, 3, rng);
  const TD x = normal({3, 4, 4}, rng, 3.0);
  const std::vector<TD> levels{x, x, x};
  const auto out = decode(std::span<const TD>(levels), p);
  auto state = RecurrentState<double>::zeros({2, 4, 4});
  for (int s = 0; s < 3; ++s) state = convlstm_step(x, state, p);
  EXPECT_TRUE((out.final_hidden.values() == state.hidden.values()).all());
  EXPECT_EQ(out.level_hidden.size(), 3u);
  EXPECT_TRUE((out.final_hidden.values().abs() < 1.0).all());
}

TEST(PredictMaskTest, ZeroHeadIsHalf) {
  Rng rng(6);
  const auto out = predict_mask(normal({2, 4, 4}, rng), MaskHead<double>{TD::zeros({1, 2, 1, 1}), TD::zeros({1})},
                                16, 16);
  ASSERT_EQ(out.prob.shape(), (Shape{1, 16, 16}));
  EXPECT_TRUE((out.prob.values() == 0.5).all());
  // The threshold is inclusive.
  EXPECT_TRUE((out.mask().values() == 1.0f).all());
}

TEST(PredictMaskTest, ConstantLogitsStayConstant) {
  const auto out = predict_mask(TD::constant({2, 3, 3}, 1.0),
                                MaskHead<double>{TD::from({1, 2, 1, 1}, {0.5, -1.5}), TD::scalar(0.25)}, 12, 12);
  EXPECT_LE((out.prob.values() - 1.0 / (1.0 + std::exp(0.75))).abs().maxCoeff(), 1e-15);
}

TEST(PredictMaskTest, BilinearThenSigmoid) {
  const TD hidden = TD::from({1, 2, 2}, {0.0, 1.0, -2.0, 3.0});
  const auto out = predict_mask(hidden, MaskHead<double>{TD::from({1, 1, 1, 1}, {1.0}), TD::zeros({1})}, 4, 4);
  // Source coordinate (d + 0.5) / 2 - 0.5, clamped: 0, 0.25, 0.75, 1.
  const double t[4] = {0.0, 0.25, 0.75, 1.0};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double top = (1 - t[x]) * 0.0 + t[x] * 1.0;
      const double bottom = (1 - t[x]) * -2.0 + t[x] * 3.0;
      const double logit = (1 - t[y]) * top + t[y] * bottom;
      EXPECT_NEAR(out.prob.at({0, y, x}), 1.0 / (1.0 + std::exp(-logit)), 1e-15);
    }
}

TEST(BackboneTest, DeskShapes) {
  const BackboneConfig config;
  Rng rng(7);
  const auto p = BackboneParams<double>::init(config, rng);
  const auto levels = extract_levels(normal({3, 64, 64}, rng), p);
  ASSERT_EQ(levels.size(), 3u);
  for (const auto& l : levels) EXPECT_EQ(l.shape(), (Shape{32, 16, 16}));
  EXPECT_THROW(extract_levels(TD::zeros({3, 62, 64}), p), ShapeError);
}

TEST(BackboneTest, ZeroProjectionsGiveZeroMaps) {
  const BackboneConfig config;
  Rng rng(8);
  auto p = BackboneParams<double>::init(config, rng);
  for (auto& proj : p.projections) {
    proj.kernel = TD::zeros(proj.kernel.shape());
    proj.bias = TD::zeros(proj.bias.shape());
  }
  for (const auto& l : extract_levels(normal({3, 32, 32}, rng), p)) EXPECT_TRUE((l.values() == 0.0).all());
}

TEST(BackboneTest, ReceptiveFieldsGrowWithDepth) {
  const auto rf = BackboneConfig{}.tap_receptive_fields();
  ASSERT_EQ(rf.size(), 3u);
  EXPECT_LT(rf[0], rf[1]);
  EXPECT_LT(rf[1], rf[2]);
}

TEST(BackboneTest, DeepestLevelReachesStem) {
  BackboneConfig config;
  config.stem_widths = {3, 4};
  config.block_width = 4;
  config.visual_channels = 3;
  Rng rng(9);
  const auto p = BackboneParams<double>::init(config, rng);
  const TD image = normal({3, 16, 16}, rng);
  const TD w = p.stem[0].kernel;
  auto f = [&](const TD& stem_kernel) {
    BackboneParams<double> q = p;
    q.stem[0].kernel = stem_kernel;
    return sum(extract_levels(image, q).front());
  };
  GradCheckOptions opts;
  opts.max_elements = 12;
  EXPECT_LE(grad_check(f, w, opts), 1e-4);

  Tape<double> tape;
  BackboneParams<double> q = p;
  q.stem[0].kernel = tape.watch(w);
  tape.backward(sum(extract_levels(image, q).front()));
  EXPECT_GT(tape.grad(q.stem[0].kernel).values().abs().maxCoeff(), 0.0);
}

}  // namespace
}  // namespace refseg
