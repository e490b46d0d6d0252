#pragma once

#include "refseg/ops.hpp"
#include "refseg/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace refseg {

/// Gate blocks are stacked in the order (input, forget, output, cell) in every
/// weight and bias of this module. Checkpoints depend on this order.
enum Gate : int { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCellGate = 3 };
inline constexpr int kGateCount = 4;
inline constexpr double kForgetBiasInit = 1.0;

using Rng = std::mt19937_64;

/// Uniform values in [-bound, bound].
template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng);

/// Fully connected LSTM parameters.
template <typename T>
struct LstmParams {
  Tensor<T> w_input;   // [4 * hidden, input]
  Tensor<T> w_hidden;  // [4 * hidden, hidden]
  Tensor<T> bias;      // [4 * hidden]

  Index hidden_size() const { return w_hidden.dim(1); }
  Index input_size() const { return w_input.dim(1); }

  static LstmParams init(Index input, Index hidden, Rng& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w_input", w_input);
    f(prefix + ".w_hidden", w_hidden);
    f(prefix + ".bias", bias);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".w_input", w_input);
    f(prefix + ".w_hidden", w_hidden);
    f(prefix + ".bias", bias);
  }
};

/// Convolutional LSTM parameters: one kernel over the channel concatenation
/// of the input and the previous hidden state.
template <typename T>
struct ConvLstmParams {
  Tensor<T> kernel;  // [4 * hidden, input + hidden, k, k]
  Tensor<T> bias;    // [4 * hidden]

  Index hidden_channels() const { return kernel.dim(0) / kGateCount; }
  Index input_channels() const { return kernel.dim(1) - hidden_channels(); }
  int kernel_size() const { return static_cast<int>(kernel.dim(2)); }

  static ConvLstmParams init(Index input_channels, Index hidden_channels, int k, Rng& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".kernel", kernel);
    f(prefix + ".bias", bias);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".kernel", kernel);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
struct RecurrentState {
  Tensor<T> hidden;
  Tensor<T> cell;

  static RecurrentState zeros(const Shape& shape) {
    return {Tensor<T>::zeros(shape), Tensor<T>::zeros(shape)};
  }
};

/// Activated gates of one recurrent step.
template <typename T>
struct GateSet {
  Tensor<T> input, forget, output, cell;
};

/// Splits stacked pre-activations [4 * hidden, ...] in (i, f, o, g) order
/// and applies sigmoid / tanh.
template <typename T>
GateSet<T> activate_gates(const Tensor<T>& pre, Index hidden);

template <typename T>
GateSet<T> lstm_gates(const Tensor<T>& x, const RecurrentState<T>& state, const LstmParams<T>& p);

template <typename T>
RecurrentState<T> lstm_step(const Tensor<T>& x, const RecurrentState<T>& state,
                            const LstmParams<T>& p);

/// Runs `fwd` over rows 0..L-1 and `bwd` over rows L-1..0 of embeds [L, C];
/// row l of the result is [fwd hidden at l, bwd hidden at l].
template <typename T>
Tensor<T> bilstm_run(const Tensor<T>& embeds, const LstmParams<T>& fwd, const LstmParams<T>& bwd);

template <typename T>
GateSet<T> convlstm_gates(const Tensor<T>& x, const RecurrentState<T>& state,
                          const ConvLstmParams<T>& p);

template <typename T>
RecurrentState<T> convlstm_step(const Tensor<T>& x, const RecurrentState<T>& state,
                                const ConvLstmParams<T>& p);

}  // namespace refseg
