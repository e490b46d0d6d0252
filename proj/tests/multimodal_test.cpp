#include "refseg/multimodal.hpp"

#include <gtest/gtest.h>

namespace refseg {
namespace {

using TD = Tensor<double>;

TD normal(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Buffer<double> v(element_count(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
  return TD(std::move(shape), std::move(v));
}

TEST(SpatialCoordsTest, SingleCellSpansImage) {
  const TD s = spatial_coords<double>(1, 1);
  ASSERT_EQ(s.shape(), (Shape{8, 1, 1}));
  const double want[8] = {-1, 0, 1, -1, 0, 1, 1, 1};
  for (Index c = 0; c < 8; ++c) EXPECT_EQ(s[c], want[c]);
}

TEST(SpatialCoordsTest, TwoColumnCenters) {
  const TD s = spatial_coords<double>(2, 1);
  EXPECT_EQ(s.at({1, 0, 0}), -0.5);
  EXPECT_EQ(s.at({1, 0, 1}), 0.5);
}

TEST(SpatialCoordsTest, FourByFourClosedForm) {
  const TD s = spatial_coords<double>(4, 4);
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) {
      const double left = x / 2.0 - 1.0, top = y / 2.0 - 1.0;
      EXPECT_DOUBLE_EQ(s.at({0, y, x}), left);
      EXPECT_DOUBLE_EQ(s.at({1, y, x}), left + 0.25);
      EXPECT_DOUBLE_EQ(s.at({2, y, x}), left + 0.5);
      EXPECT_DOUBLE_EQ(s.at({3, y, x}), top);
      EXPECT_DOUBLE_EQ(s.at({4, y, x}), top + 0.25);
      EXPECT_DOUBLE_EQ(s.at({5, y, x}), top + 0.5);
      EXPECT_DOUBLE_EQ(s.at({6, y, x}), 0.25);
      EXPECT_DOUBLE_EQ(s.at({7, y, x}), 0.25);
    }
}

TEST(BuildMultimodalTest, ChannelLayout) {
  Rng rng(1);
  const TD visual = normal({5, 3, 4}, rng);
  const TD word = normal({6}, rng);
  const TD m = build_word_multimodal(visual, spatial_coords<double>(4, 3), word);
  ASSERT_EQ(m.shape(), (Shape{5 + 8 + 6, 3, 4}));
  for (Index c = 0; c < 6; ++c)
    for (Index y = 0; y < 3; ++y)
      for (Index x = 0; x < 4; ++x) EXPECT_EQ(m.at({5 + 8 + c, y, x}), word[c]);
  const TD zero = build_word_multimodal(visual, spatial_coords<double>(4, 3), TD::zeros({6}));
  for (Index i = 13 * 12; i < zero.size(); ++i) EXPECT_EQ(zero[i], 0.0);
  EXPECT_THROW(build_word_multimodal(visual, spatial_coords<double>(3, 3), word), ShapeError);
}

class ModulatedStepTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(2);
    p = {normal({12, 7 + 3, 3, 3}, rng, 0.4), normal({12}, rng, 0.4)};
    m = normal({7, 4, 4}, rng);
    state = {normal({3, 4, 4}, rng), normal({3, 4, 4}, rng)};
    gates = convlstm_gates(m, state, p);
  }
  ConvLstmParams<double> p;
  TD m;
  RecurrentState<double> state;
  GateSet<double> gates;
};

TEST_F(ModulatedStepTest, FullAttentionKeepsInputPath) {
  const auto s = modulated_convlstm_step(m, TD::scalar(1.0), state, p);
  const TD ig = mul(gates.input, gates.cell);
  EXPECT_TRUE((s.cell.values() == ig.values()).all());
}

TEST_F(ModulatedStepTest, ZeroAttentionKeepsForgetPath) {
  const auto s = modulated_convlstm_step(m, TD::scalar(0.0), state, p);
  const TD fc = mul(gates.forget, state.cell);
  EXPECT_TRUE((s.cell.values() == fc.values()).all());
}

TEST_F(ModulatedStepTest, HalfAttentionHalvesUpdate) {
  const auto s = modulated_convlstm_step(m, TD::scalar(0.5), state, p);
  const auto plain = convlstm_step(m, state, p);
  EXPECT_LE((s.cell.values() - 0.5 * plain.cell.values()).abs().maxCoeff(), 1e-12);
}

TEST_F(ModulatedStepTest, AttentionOutsideUnitIntervalRejected) {
  EXPECT_THROW(modulated_convlstm_step(m, TD::scalar(1.5), state, p), std::invalid_argument);
}

TEST(EncodeTest, SingleWordIsPureInputPath) {
  Rng rng(3);
  const auto p = ConvLstmParams<double>::init(4 + 8 + 2, 3, 3, rng);
  const TD visual = normal({4, 5, 5}, rng);
  const TD r = normal({1, 2}, rng);
  const WordFeatures<double> words{r, TD::scalar(1.0), r};
  const auto out = encode(visual, words, p);
  const TD m = build_word_multimodal(visual, spatial_coords<double>(5, 5), r.reshaped({2}));
  const auto g = convlstm_gates(m, RecurrentState<double>::zeros({3, 5, 5}), p);
  const TD want = mul(g.output, tanh(mul(g.input, g.cell)));
  EXPECT_LE((out.final_hidden.values() - want.values()).abs().maxCoeff(), 1e-12);
}

TEST(EncodeTest, TwoWordsEqualManualSteps) {
  Rng rng(4);
  const auto p = ConvLstmParams<double>::init(4 + 8 + 2, 3, 3, rng);
  const TD visual = normal({4, 6, 5}, rng);
  const TD r = normal({2, 2}, rng);
  const TD a = TD::from({2}, {0.3, 0.7});
  const auto out = encode(visual, WordFeatures<double>{r, a, r}, p, true);
  const TD spatial = spatial_coords<double>(5, 6);
  auto state = RecurrentState<double>::zeros({3, 6, 5});
  for (Index l = 0; l < 2; ++l) {
    const TD m = build_word_multimodal(visual, spatial, slice(r, 0, l, 1).reshaped({2}));
    state = modulated_convlstm_step(m, slice(a, 0, l, 1), state, p);
    EXPECT_LE((out.step_hidden[static_cast<std::size_t>(l)].values() - state.hidden.values()).abs().maxCoeff(),
              1e-12);
  }
  EXPECT_LE((out.final_hidden.values() - state.hidden.values()).abs().maxCoeff(), 1e-12);
  const auto again = encode(visual, WordFeatures<double>{r, a, r}, p);
  EXPECT_TRUE((again.final_hidden.values() == out.final_hidden.values()).all());
}

TEST(EncodeTest, GradientMatchesStepwiseGraph) {
  Rng rng(5);
  const auto p0 = ConvLstmParams<double>::init(3 + 8 + 2, 2, 3, rng);
  const TD visual = normal({3, 4, 4}, rng);
  const TD r = normal({3, 2}, rng);
  const TD a = softmax(normal({3}, rng));
  const TD proj = normal({2, 4, 4}, rng);

  auto grads = [&](bool fast) {
    Tape<double> tape;
    const ConvLstmParams<double> p{tape.watch(p0.kernel), tape.watch(p0.bias)};
    const TD v = tape.watch(visual), rr = tape.watch(r);
    TD h;
    if (fast) {
      h = encode(v, WordFeatures<double>{rr, a, rr}, p).final_hidden;
    } else {
      auto state = RecurrentState<double>::zeros({2, 4, 4});
      for (Index l = 0; l < 3; ++l) {
        const TD m = build_word_multimodal(v, spatial_coords<double>(4, 4), reshape(slice(rr, 0, l, 1), {2}));
        state = modulated_convlstm_step(m, slice(a, 0, l, 1), state, p);
      }
      h = state.hidden;
    }
    tape.backward(sum(mul(h, proj)));
    return std::vector<TD>{tape.grad(p.kernel), tape.grad(p.bias), tape.grad(v), tape.grad(rr)};
  };
  const auto fast = grads(true), slow = grads(false);
  for (std::size_t i = 0; i < fast.size(); ++i) {
    EXPECT_LE((fast[i].values() - slow[i].values()).abs().maxCoeff(), 1e-12) << "input " << i;
  }
}

}  // namespace
}  // namespace refseg
