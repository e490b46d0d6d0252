#include "refseg/decoder.hpp"

#include <cmath>
#include <stdexcept>

namespace refseg {

template <typename T>
SpatialAttentionParams<T> SpatialAttentionParams<T>::init(Index channels, int k, Rng& rng) {
  if (k % 2 == 0) throw std::invalid_argument("spatial attention kernel must be odd");
  SpatialAttentionParams p;
  p.kernel = uniform_tensor<T>({1, channels, k, k}, 1.0 / std::sqrt(double(channels * k * k)), rng);
  p.bias = Tensor<T>::zeros({1});
  return p;
}

template <typename T>
MaskHead<T> MaskHead<T>::init(Index channels, Rng& rng) {
  MaskHead h;
  h.kernel = uniform_tensor<T>({1, channels, 1, 1}, 1.0 / std::sqrt(double(channels)), rng);
  h.bias = Tensor<T>::zeros({1});
  return h;
}

template <typename T>
Tensor<float> SegmentationOutput<T>::mask() const {
  const Index h = prob.dim(1), w = prob.dim(2);
  Buffer<float> m = (prob.values() >= static_cast<T>(kMaskThreshold)).template cast<float>();
  return Tensor<float>({h, w}, std::move(m));
}

template <typename T>
Tensor<T> spatial_gate(const Tensor<T>& features, const SpatialAttentionParams<T>& p) {
  if (features.rank() != 3) throw ShapeError("spatial_attention", -1, "features must be [C, H, W]");
  if (p.kernel.rank() != 4 || p.kernel.dim(0) != 1) {
    throw ShapeError("spatial_attention", 0, "kernel must be [1, C, k, k]");
  }
  const int k = static_cast<int>(p.kernel.dim(2));
  if (k % 2 == 0) throw ShapeError("spatial_attention", 2, "kernel size must be odd");
  return sigmoid(conv2d(features, p.kernel, p.bias, (k - 1) / 2));
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& features, const SpatialAttentionParams<T>& p) {
  return mul_channels(spatial_gate(features, p), features);
}

template <typename T>
DecoderOutput<T> decode(std::span<const Tensor<T>> levels, const ConvLstmParams<T>& p) {
  if (levels.empty()) throw std::invalid_argument("decode: no feature levels");
  const Tensor<T>& first = levels.front();
  if (first.rank() != 3) throw ShapeError("decode", -1, "levels must be [C, H, W]");
  auto state = RecurrentState<T>::zeros({p.hidden_channels(), first.dim(1), first.dim(2)});
  DecoderOutput<T> out;
  for (const auto& level : levels) {
    state = convlstm_step(level, state, p);
    out.level_hidden.push_back(state.hidden);
  }
  out.final_hidden = state.hidden;
  return out;
}

template <typename T>
SegmentationOutput<T> predict_mask(const Tensor<T>& hidden, const MaskHead<T>& head, Index image_h,
                                   Index image_w) {
  if (image_h < 1 || image_w < 1) throw std::invalid_argument("predict_mask: target size must be positive");
  Tensor<T> logits = upsample_bilinear(conv2d(hidden, head.kernel, head.bias, 0), image_h, image_w);
  Tensor<T> prob = sigmoid(logits);
  return {std::move(logits), std::move(prob)};
}

#define REFSEG_INSTANTIATE_DECODER(T)                                                        \
  template struct SpatialAttentionParams<T>;                                                 \
  template struct MaskHead<T>;                                                               \
  template struct SegmentationOutput<T>;                                                     \
  template Tensor<T> spatial_gate(const Tensor<T>&, const SpatialAttentionParams<T>&);       \
  template Tensor<T> spatial_attention(const Tensor<T>&, const SpatialAttentionParams<T>&);  \
  template DecoderOutput<T> decode(std::span<const Tensor<T>>, const ConvLstmParams<T>&);    \
  template SegmentationOutput<T> predict_mask(const Tensor<T>&, const MaskHead<T>&, Index, Index);

REFSEG_INSTANTIATE_DECODER(float)
REFSEG_INSTANTIATE_DECODER(double)

#undef REFSEG_INSTANTIATE_DECODER

}  // namespace refseg
