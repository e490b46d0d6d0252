#include "refseg/multimodal.hpp"

#include <stdexcept>

namespace refseg {

template <typename T>
Tensor<T> spatial_coords(Index width, Index height) {
  if (width < 1 || height < 1) {
    throw std::invalid_argument("spatial_coords: grid size must be positive");
  }
  const Index plane = width * height;
  Buffer<T> out(kSpatialChannels * plane);
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  for (Index y = 0; y < height; ++y) {
    const double top = 2.0 * static_cast<double>(y) / h - 1.0;
    const double bottom = 2.0 * static_cast<double>(y + 1) / h - 1.0;
    for (Index x = 0; x < width; ++x) {
      const double left = 2.0 * static_cast<double>(x) / w - 1.0;
      const double right = 2.0 * static_cast<double>(x + 1) / w - 1.0;
      const double values[kSpatialChannels] = {left, (left + right) / 2.0, right,
                                               top,  (top + bottom) / 2.0, bottom,
                                               1.0 / w, 1.0 / h};
      for (Index c = 0; c < kSpatialChannels; ++c) {
        out(c * plane + y * width + x) = static_cast<T>(values[c]);
      }
    }
  }
  return Tensor<T>({kSpatialChannels, height, width}, std::move(out));
}

template <typename T>
Tensor<T> build_word_multimodal(const Tensor<T>& visual, const Tensor<T>& spatial,
                                const Tensor<T>& word) {
  if (visual.rank() != 3) throw ShapeError("build_word_multimodal", -1, "visual map must be [C, H, W]");
  if (spatial.rank() != 3 || spatial.dim(0) != kSpatialChannels) {
    throw ShapeError("build_word_multimodal", 0, "spatial map must be [8, H, W], got " + to_string(spatial.shape()));
  }
  for (int axis = 1; axis < 3; ++axis) {
    if (spatial.dim(axis) != visual.dim(axis)) {
      throw ShapeError("build_word_multimodal", axis,
                       to_string(visual.shape()) + " vs " + to_string(spatial.shape()));
    }
  }
  if (word.rank() != 1) throw ShapeError("build_word_multimodal", -1, "word feature must be a vector");
  return concat({visual, spatial, tile_spatial(word, visual.dim(1), visual.dim(2))}, 0);
}

namespace {

template <typename T>
RecurrentState<T> modulated_update(const GateSet<T>& g, const Tensor<T>& attention, const Tensor<T>& prev_cell) {
  Tensor<T> cell = add(scale_by(mul(g.input, g.cell), attention),
                       scale_by(mul(g.forget, prev_cell), affine(attention, T(-1), T(1))));
  return {mul(g.output, tanh(cell)), cell};
}

// 0/1 matrix [k * k, H * W]: row (u, v) marks the cells where kernel tap
// (k - 1 - u, k - 1 - v) lands inside the zero-padded grid.
template <typename T>
Tensor<T> tap_coverage(int k, int pad, Index height, Index width) {
  Buffer<T> m = Buffer<T>::Zero(Index{k} * k * height * width);
  for (int u = 0; u < k; ++u) {
    for (int v = 0; v < k; ++v) {
      const Index i = k - 1 - u, j = k - 1 - v;
      T* row = m.data() + (Index{u} * k + v) * height * width;
      for (Index y = 0; y < height; ++y) {
        const Index sy = y + i - pad;
        if (sy < 0 || sy >= height) continue;
        for (Index x = 0; x < width; ++x) {
          const Index sx = x + j - pad;
          if (sx >= 0 && sx < width) row[y * width + x] = T(1);
        }
      }
    }
  }
  return Tensor<T>({Index{k} * k, height * width}, std::move(m));
}

}  // namespace

template <typename T>
RecurrentState<T> modulated_convlstm_step(const Tensor<T>& multimodal, const Tensor<T>& attention,
                                          const RecurrentState<T>& state,
                                          const ConvLstmParams<T>& p) {
  if (attention.size() != 1) throw ShapeError("modulated_convlstm_step", -1, "attention must be one value");
  const T a = attention[0];
  if (!(a >= T(0) && a <= T(1))) {
    throw std::invalid_argument("modulated_convlstm_step: attention " + std::to_string(double(a)) +
                                " outside [0, 1]");
  }
  return modulated_update(convlstm_gates(multimodal, state, p), attention, state.cell);
}

template <typename T>
EncoderOutput<T> encode(const Tensor<T>& visual, const WordFeatures<T>& words,
                        const ConvLstmParams<T>& p, bool keep_steps) {
  if (visual.rank() != 3) throw ShapeError("encode", -1, "visual map must be [C, H, W]");
  const Index length = words.r.dim(0), features = words.r.dim(1);
  if (length < 1) throw std::invalid_argument("encode: empty expression");
  const Index height = visual.dim(1), width = visual.dim(2);
  const Tensor<T> spatial = spatial_coords<T>(width, height);

  const Index hidden = p.hidden_channels();
  if (visual.dim(0) + kSpatialChannels + features != p.input_channels()) {
    throw ShapeError("encode", 0,
                     "visual + spatial + word channels " +
                         std::to_string(visual.dim(0) + kSpatialChannels + features) + ", kernel expects " +
                         std::to_string(p.input_channels()));
  }

  // The convolution over [V; spatial; tiled r_l; H] splits by input block.
  // The visual and spatial part is the same for every word. The word part
  // sees a spatially constant map, so it reduces to one k x k response per
  // tap spread over the cells each tap reaches.
  const int k = p.kernel_size(), pad = (k - 1) / 2;
  const Index context = visual.dim(0) + kSpatialChannels;
  const Tensor<T> k_context = slice(p.kernel, 1, 0, context);
  const Tensor<T> k_word = slice(p.kernel, 1, context, features);
  const Tensor<T> k_hidden = slice(p.kernel, 1, context + features, hidden);
  const Tensor<T> no_bias = Tensor<T>::zeros({kGateCount * hidden});
  const Tensor<T> base = conv2d(concat({visual, spatial}, 0), k_context, p.bias, pad);
  const Tensor<T> coverage = tap_coverage<T>(k, pad, height, width);

  auto state = RecurrentState<T>::zeros({hidden, height, width});
  EncoderOutput<T> out;
  for (Index l = 0; l < length; ++l) {
    Tensor<T> word = reshape(slice(words.r, 0, l, 1), {features, 1, 1});
    Tensor<T> spread = matmul(reshape(conv2d(word, k_word, no_bias, k - 1), {kGateCount * hidden, Index{k} * k}),
                              coverage);
    Tensor<T> pre = add(base, reshape(spread, {kGateCount * hidden, height, width}));
    if (l > 0) pre = add(pre, conv2d(state.hidden, k_hidden, no_bias, pad));
    state = modulated_update(activate_gates(pre, hidden), slice(words.a, 0, l, 1), state.cell);
    if (keep_steps) out.step_hidden.push_back(state.hidden);
  }
  out.final_hidden = state.hidden;
  return out;
}

#define REFSEG_INSTANTIATE_MULTIMODAL(T)                                                          \
  template Tensor<T> spatial_coords<T>(Index, Index);                                             \
  template Tensor<T> build_word_multimodal(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template RecurrentState<T> modulated_convlstm_step(const Tensor<T>&, const Tensor<T>&,          \
                                                     const RecurrentState<T>&,                    \
                                                     const ConvLstmParams<T>&);                   \
  template EncoderOutput<T> encode(const Tensor<T>&, const WordFeatures<T>&,                      \
                                   const ConvLstmParams<T>&, bool);

REFSEG_INSTANTIATE_MULTIMODAL(float)
REFSEG_INSTANTIATE_MULTIMODAL(double)

#undef REFSEG_INSTANTIATE_MULTIMODAL

}  // namespace refseg
