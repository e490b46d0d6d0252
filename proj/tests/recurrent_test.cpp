#include "refseg/recurrent.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace refseg {
namespace {

using TD = Tensor<double>;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

TD normal(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Buffer<double> v(element_count(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
  return TD(std::move(shape), std::move(v));
}

LstmParams<double> zero_lstm(Index in, Index hid) {
  return {TD::zeros({4 * hid, in}), TD::zeros({4 * hid, hid}), TD::zeros({4 * hid})};
}

TEST(LstmTest, InitSetsForgetBias) {
  Rng rng(1);
  const auto p = LstmParams<double>::init(3, 2, rng);
  EXPECT_EQ(p.w_input.shape(), (Shape{8, 3}));
  EXPECT_EQ(p.w_hidden.shape(), (Shape{8, 2}));
  for (Index j = 0; j < 8; ++j) EXPECT_EQ(p.bias[j], j / 2 == kForgetGate ? 1.0 : 0.0);
}

TEST(LstmTest, ZeroParamsZeroCell) {
  Rng rng(2);
  const auto s = lstm_step(normal({3}, rng), RecurrentState<double>{normal({2}, rng), TD::zeros({2})}, zero_lstm(3, 2));
  EXPECT_TRUE((s.hidden.values() == 0.0).all());
  EXPECT_TRUE((s.cell.values() == 0.0).all());
}

TEST(LstmTest, ZeroParamsHalveCell) {
  const TD c = TD::from({2}, {0.8, -1.6});
  const auto s = lstm_step(TD::zeros({3}), RecurrentState<double>{TD::zeros({2}), c}, zero_lstm(3, 2));
  for (Index i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(s.cell[i], 0.5 * c[i]);
    EXPECT_DOUBLE_EQ(s.hidden[i], 0.5 * std::tanh(0.5 * c[i]));
  }
}

TEST(LstmTest, ScalarHandCalculation) {
  // One input, one hidden unit; rows are (i, f, o, g).
  const LstmParams<double> p{TD::from({4, 1}, {0.5, -0.3, 0.8, 1.2}), TD::from({4, 1}, {0.1, 0.2, -0.4, 0.7}),
                             TD::from({4}, {0.0, 1.0, 0.1, -0.2})};
  const double x = 0.6, h = -0.5, c = 0.3;
  const auto s = lstm_step(TD::from({1}, {x}), RecurrentState<double>{TD::from({1}, {h}), TD::from({1}, {c})}, p);
  const double i = sig(0.5 * x + 0.1 * h);
  const double f = sig(-0.3 * x + 0.2 * h + 1.0);
  const double o = sig(0.8 * x - 0.4 * h + 0.1);
  const double g = std::tanh(1.2 * x + 0.7 * h - 0.2);
  const double cell = f * c + i * g;
  EXPECT_NEAR(s.cell[0], cell, 1e-15);
  EXPECT_NEAR(s.hidden[0], o * std::tanh(cell), 1e-15);
}

TEST(BiLstmTest, SingleStepConcatenatesDirections) {
  Rng rng(4);
  const auto fwd = LstmParams<double>::init(3, 2, rng);
  const auto bwd = LstmParams<double>::init(3, 2, rng);
  const TD x = normal({1, 3}, rng);
  const TD out = bilstm_run(x, fwd, bwd);
  ASSERT_EQ(out.shape(), (Shape{1, 4}));
  const auto zero = RecurrentState<double>::zeros({2});
  const TD f = lstm_step(x.reshaped({3}), zero, fwd).hidden;
  const TD b = lstm_step(x.reshaped({3}), zero, bwd).hidden;
  for (Index j = 0; j < 2; ++j) {
    EXPECT_EQ(out.at({0, j}), f[j]);
    EXPECT_EQ(out.at({0, 2 + j}), b[j]);
  }
}

TEST(BiLstmTest, PalindromeSwapsHalves) {
  Rng rng(5);
  const auto p = LstmParams<double>::init(3, 4, rng);
  const TD a = normal({1, 3}, rng), b = normal({1, 3}, rng), c = normal({1, 3}, rng);
  const TD out = bilstm_run(concat({a, b, c, b, a}, 0), p, p);
  for (Index l = 0; l < 5; ++l)
    for (Index j = 0; j < 4; ++j) EXPECT_NEAR(out.at({l, j}), out.at({4 - l, 4 + j}), 1e-15);
}

TEST(BiLstmTest, ZeroParamsZeroOutput) {
  Rng rng(6);
  const TD out = bilstm_run(normal({4, 3}, rng), zero_lstm(3, 2), zero_lstm(3, 2));
  EXPECT_TRUE((out.values() == 0.0).all());
}

TEST(ConvLstmTest, ZeroParams) {
  Rng rng(7);
  const ConvLstmParams<double> p{TD::zeros({8, 5, 3, 3}), TD::zeros({8})};
  const TD x = normal({3, 4, 4}, rng);
  const auto s0 = convlstm_step(x, RecurrentState<double>::zeros({2, 4, 4}), p);
  EXPECT_TRUE((s0.hidden.values() == 0.0).all());
  EXPECT_TRUE((s0.cell.values() == 0.0).all());
  const TD c = normal({2, 4, 4}, rng);
  const auto s1 = convlstm_step(x, RecurrentState<double>{normal({2, 4, 4}, rng), c}, p);
  for (Index i = 0; i < c.size(); ++i) EXPECT_DOUBLE_EQ(s1.cell[i], 0.5 * c[i]);
}

TEST(ConvLstmTest, PointwiseKernelMatchesScalarOracle) {
  // One input channel, one hidden channel, 2x2 grid, k = 1.
  const TD kernel = TD::from({4, 2, 1, 1}, {0.4, 0.3, -0.6, 0.2, 0.9, -0.1, 0.5, 0.8});
  const TD bias = TD::from({4}, {0.05, 1.0, -0.1, 0.2});
  const ConvLstmParams<double> p{kernel, bias};
  const TD x = TD::from({1, 2, 2}, {0.1, -0.7, 1.3, 0.4});
  const TD h = TD::from({1, 2, 2}, {0.2, 0.0, -0.3, 0.6});
  const TD c = TD::from({1, 2, 2}, {-0.5, 0.9, 0.1, 0.0});
  const auto s = convlstm_step(x, RecurrentState<double>{h, c}, p);
  for (Index q = 0; q < 4; ++q) {
    auto pre = [&](int gate) { return kernel[2 * gate] * x[q] + kernel[2 * gate + 1] * h[q] + bias[gate]; };
    const double cell = sig(pre(kForgetGate)) * c[q] + sig(pre(kInputGate)) * std::tanh(pre(kCellGate));
    EXPECT_NEAR(s.cell[q], cell, 1e-15);
    EXPECT_NEAR(s.hidden[q], sig(pre(kOutputGate)) * std::tanh(cell), 1e-15);
  }
}

TEST(ConvLstmTest, OneByOneMatchesLstm) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Index in = 3, hid = 4;
    const ConvLstmParams<double> conv{normal({4 * hid, in + hid, 1, 1}, rng, 0.5), normal({4 * hid}, rng, 0.5)};
    const TD flat = conv.kernel.reshaped({4 * hid, in + hid});
    const LstmParams<double> dense{slice(flat, 1, 0, in), slice(flat, 1, in, hid), conv.bias};
    const TD x = normal({in}, rng);
    const RecurrentState<double> state{normal({hid}, rng), normal({hid}, rng)};
    const auto a = convlstm_step(x.reshaped({in, 1, 1}),
                                 RecurrentState<double>{state.hidden.reshaped({hid, 1, 1}),
                                                        state.cell.reshaped({hid, 1, 1})},
                                 conv);
    const auto b = lstm_step(x, state, dense);
    EXPECT_LE((a.hidden.values() - b.hidden.values()).abs().maxCoeff(), 1e-12);
    EXPECT_LE((a.cell.values() - b.cell.values()).abs().maxCoeff(), 1e-12);
  }
}

TEST(ConvLstmTest, ShapeErrors) {
  Rng rng(9);
  const auto p = ConvLstmParams<double>::init(3, 2, 3, rng);
  EXPECT_THROW(convlstm_step(TD::zeros({4, 4, 4}), RecurrentState<double>::zeros({2, 4, 4}), p), ShapeError);
  EXPECT_THROW(convlstm_step(TD::zeros({3, 4, 4}), RecurrentState<double>::zeros({2, 5, 4}), p), ShapeError);
  EXPECT_THROW(ConvLstmParams<double>::init(3, 2, 2, rng), std::invalid_argument);
}

}  // namespace
}  // namespace refseg
