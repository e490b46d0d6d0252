#pragma once

#include "refseg/recurrent.hpp"

#include <span>
#include <vector>

namespace refseg {

inline constexpr int kSpatialAttentionKernel = 7;
inline constexpr double kMaskThreshold = 0.5;

/// Single-channel gate: sigmoid(kernel * M + bias), kernel [1, C_s, k, k].
template <typename T>
struct SpatialAttentionParams {
  Tensor<T> kernel;
  Tensor<T> bias;  // [1]

  static SpatialAttentionParams init(Index channels, int k, Rng& rng);

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

/// 1x1 projection of the decoder hidden state to one logit per cell.
template <typename T>
struct MaskHead {
  Tensor<T> kernel;  // [1, C_d, 1, 1]
  Tensor<T> bias;    // [1]

  static MaskHead init(Index channels, Rng& rng);

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
struct SegmentationOutput {
  Tensor<T> logits;  // [1, H_img, W_img]
  Tensor<T> prob;    // sigmoid(logits)

  /// prob >= 0.5, as a {0,1} map [H_img, W_img].
  Tensor<float> mask() const;
};

/// The gate map [1, H, W] of spatial attention.
template <typename T>
Tensor<T> spatial_gate(const Tensor<T>& features, const SpatialAttentionParams<T>& p);

/// sigmoid(kernel * M + bias) multiplied into every channel of M.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& features, const SpatialAttentionParams<T>& p);

template <typename T>
struct DecoderOutput {
  Tensor<T> final_hidden;
  std::vector<Tensor<T>> level_hidden;
};

/// Plain ConvLSTM over the levels in the given order (high-level first),
/// from a zero state.
template <typename T>
DecoderOutput<T> decode(std::span<const Tensor<T>> levels, const ConvLstmParams<T>& p);

template <typename T>
SegmentationOutput<T> predict_mask(const Tensor<T>& hidden, const MaskHead<T>& head, Index image_h,
                                   Index image_w);

}  // namespace refseg
