#include "refseg/recurrent.hpp"

#include <cmath>

namespace refseg {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Buffer<T> values(element_count(shape));
  for (Index i = 0; i < values.size(); ++i) values(i) = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values));
}

namespace {

template <typename T>
Tensor<T> gate_bias(Index hidden) {
  Buffer<T> b = Buffer<T>::Zero(kGateCount * hidden);
  b.segment(kForgetGate * hidden, hidden).setConstant(static_cast<T>(kForgetBiasInit));
  return Tensor<T>({kGateCount * hidden}, std::move(b));
}

}  // namespace

template <typename T>
GateSet<T> activate_gates(const Tensor<T>& pre, Index hidden) {
  return {sigmoid(slice(pre, 0, kInputGate * hidden, hidden)),
          sigmoid(slice(pre, 0, kForgetGate * hidden, hidden)),
          sigmoid(slice(pre, 0, kOutputGate * hidden, hidden)),
          tanh(slice(pre, 0, kCellGate * hidden, hidden))};
}

namespace {

template <typename T>
RecurrentState<T> update(const GateSet<T>& g, const Tensor<T>& prev_cell) {
  Tensor<T> cell = add(mul(g.input, g.cell), mul(g.forget, prev_cell));
  return {mul(g.output, tanh(cell)), cell};
}

}  // namespace

template <typename T>
LstmParams<T> LstmParams<T>::init(Index input, Index hidden, Rng& rng) {
  LstmParams p;
  p.w_input = uniform_tensor<T>({kGateCount * hidden, input}, 1.0 / std::sqrt(double(input)), rng);
  p.w_hidden = uniform_tensor<T>({kGateCount * hidden, hidden}, 1.0 / std::sqrt(double(hidden)), rng);
  p.bias = gate_bias<T>(hidden);
  return p;
}

template <typename T>
ConvLstmParams<T> ConvLstmParams<T>::init(Index input_channels, Index hidden_channels, int k,
                                          Rng& rng) {
  if (k % 2 == 0) throw std::invalid_argument("ConvLSTM kernel size must be odd");
  const Index fan_in = (input_channels + hidden_channels) * k * k;
  ConvLstmParams p;
  p.kernel = uniform_tensor<T>({kGateCount * hidden_channels, input_channels + hidden_channels, k, k},
                               1.0 / std::sqrt(double(fan_in)), rng);
  p.bias = gate_bias<T>(hidden_channels);
  return p;
}

template <typename T>
GateSet<T> lstm_gates(const Tensor<T>& x, const RecurrentState<T>& state, const LstmParams<T>& p) {
  const Index hidden = p.hidden_size();
  if (x.rank() != 1) throw ShapeError("lstm_step", -1, "input must be a vector, got " + to_string(x.shape()));
  if (x.dim(0) != p.input_size()) {
    throw ShapeError("lstm_step", 0,
                     "input has " + std::to_string(x.dim(0)) + " features, weights expect " +
                         std::to_string(p.input_size()));
  }
  if (state.hidden.shape() != Shape{hidden} || state.cell.shape() != Shape{hidden}) {
    throw ShapeError("lstm_step", 0, "state must be [" + std::to_string(hidden) + "]");
  }
  Tensor<T> pre = add(matmul(p.w_input, reshape(x, {x.dim(0), 1})),
                      matmul(p.w_hidden, reshape(state.hidden, {hidden, 1})));
  pre = add(reshape(pre, {kGateCount * hidden}), p.bias);
  return activate_gates(pre, hidden);
}

template <typename T>
RecurrentState<T> lstm_step(const Tensor<T>& x, const RecurrentState<T>& state,
                            const LstmParams<T>& p) {
  return update(lstm_gates(x, state, p), state.cell);
}

template <typename T>
Tensor<T> bilstm_run(const Tensor<T>& embeds, const LstmParams<T>& fwd, const LstmParams<T>& bwd) {
  if (embeds.rank() != 2) throw ShapeError("bilstm_run", -1, "embeddings must be [L, C]");
  const Index length = embeds.dim(0), width = embeds.dim(1);
  if (length < 1) throw std::invalid_argument("bilstm_run: empty sequence");

  std::vector<Tensor<T>> steps;
  steps.reserve(static_cast<std::size_t>(length));
  for (Index l = 0; l < length; ++l) steps.push_back(reshape(slice(embeds, 0, l, 1), {width}));

  std::vector<Tensor<T>> forward(steps.size()), backward(steps.size());
  auto state = RecurrentState<T>::zeros({fwd.hidden_size()});
  for (std::size_t l = 0; l < steps.size(); ++l) {
    state = lstm_step(steps[l], state, fwd);
    forward[l] = state.hidden;
  }
  state = RecurrentState<T>::zeros({bwd.hidden_size()});
  for (std::size_t l = steps.size(); l-- > 0;) {
    state = lstm_step(steps[l], state, bwd);
    backward[l] = state.hidden;
  }

  std::vector<Tensor<T>> rows;
  rows.reserve(steps.size());
  const Index out_width = fwd.hidden_size() + bwd.hidden_size();
  for (std::size_t l = 0; l < steps.size(); ++l) {
    rows.push_back(reshape(concat({forward[l], backward[l]}, 0), {1, out_width}));
  }
  return concat(std::span<const Tensor<T>>(rows), 0);
}

template <typename T>
GateSet<T> convlstm_gates(const Tensor<T>& x, const RecurrentState<T>& state,
                          const ConvLstmParams<T>& p) {
  if (x.rank() != 3) throw ShapeError("convlstm_step", -1, "input must be [C, H, W], got " + to_string(x.shape()));
  const Index hidden = p.hidden_channels();
  const Shape expected{hidden, x.dim(1), x.dim(2)};
  for (int axis = 1; axis < 3; ++axis) {
    if (state.hidden.rank() != 3 || state.hidden.dim(axis) != x.dim(axis)) {
      throw ShapeError("convlstm_step", axis,
                       "input " + to_string(x.shape()) + " vs hidden " + to_string(state.hidden.shape()));
    }
  }
  if (state.hidden.shape() != expected || state.cell.shape() != expected) {
    throw ShapeError("convlstm_step", 0, "state must be " + to_string(expected));
  }
  if (x.dim(0) != p.input_channels()) {
    throw ShapeError("convlstm_step", 0,
                     "input has " + std::to_string(x.dim(0)) + " channels, kernel expects " +
                         std::to_string(p.input_channels()));
  }
  const int pad = (p.kernel_size() - 1) / 2;
  Tensor<T> pre = conv2d(concat({x, state.hidden}, 0), p.kernel, p.bias, pad);
  return activate_gates(pre, hidden);
}

template <typename T>
RecurrentState<T> convlstm_step(const Tensor<T>& x, const RecurrentState<T>& state,
                                const ConvLstmParams<T>& p) {
  return update(convlstm_gates(x, state, p), state.cell);
}

#define REFSEG_INSTANTIATE_RECURRENT(T)                                                          \
  template Tensor<T> uniform_tensor<T>(Shape, double, Rng&);                                     \
  template struct LstmParams<T>;                                                                 \
  template struct ConvLstmParams<T>;                                                             \
  template GateSet<T> activate_gates(const Tensor<T>&, Index);                                  \
  template GateSet<T> lstm_gates(const Tensor<T>&, const RecurrentState<T>&, const LstmParams<T>&); \
  template RecurrentState<T> lstm_step(const Tensor<T>&, const RecurrentState<T>&,               \
                                       const LstmParams<T>&);                                    \
  template Tensor<T> bilstm_run(const Tensor<T>&, const LstmParams<T>&, const LstmParams<T>&);   \
  template GateSet<T> convlstm_gates(const Tensor<T>&, const RecurrentState<T>&,                 \
                                     const ConvLstmParams<T>&);                                  \
  template RecurrentState<T> convlstm_step(const Tensor<T>&, const RecurrentState<T>&,           \
                                           const ConvLstmParams<T>&);

REFSEG_INSTANTIATE_RECURRENT(float)
REFSEG_INSTANTIATE_RECURRENT(double)

#undef REFSEG_INSTANTIATE_RECURRENT

}  // namespace refseg
