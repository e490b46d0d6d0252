#include "refseg/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace refseg {

std::vector<Index> BackboneConfig::tap_receptive_fields() const {
  Index field = 1, jump = 1;
  for (std::size_t i = 0; i < stem_widths.size(); ++i) {
    field += (kernel - 1) * jump;
    jump *= 2;
  }
  std::vector<Index> taps;
  for (int b = 0; b < blocks; ++b) {
    field += (kernel - 1) * jump;
    taps.push_back(field);
  }
  return taps;
}

namespace {

// ReLU layers use the He-uniform bound sqrt(6 / fan_in); the linear
// projections use 1 / sqrt(fan_in).
template <typename T>
ConvLayer<T> make_layer(Index in, Index out, int k, bool relu_follows, Rng& rng) {
  const double fan_in = static_cast<double>(in * k * k);
  const double bound = relu_follows ? std::sqrt(6.0 / fan_in) : 1.0 / std::sqrt(fan_in);
  return {uniform_tensor<T>({out, in, k, k}, bound, rng), Tensor<T>::zeros({out})};
}

}  // namespace

template <typename T>
BackboneParams<T> BackboneParams<T>::init(const BackboneConfig& config, Rng& rng) {
  if (config.blocks < 1) throw std::invalid_argument("backbone needs at least one block");
  BackboneParams p;
  Index channels = 3;
  for (Index width : config.stem_widths) {
    p.stem.push_back(make_layer<T>(channels, width, config.kernel, true, rng));
    channels = width;
  }
  for (int b = 0; b < config.blocks; ++b) {
    p.blocks.push_back(make_layer<T>(channels, config.block_width, config.kernel, true, rng));
    channels = config.block_width;
  }
  for (int b = 0; b < config.blocks; ++b) {
    p.projections.push_back(make_layer<T>(config.block_width, config.visual_channels, 1, false, rng));
  }
  return p;
}

template <typename T>
std::vector<Tensor<T>> extract_levels(const Tensor<T>& image, const BackboneParams<T>& p) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("extract_levels", 0, "image must be [3, H, W], got " + to_string(image.shape()));
  }
  const Index stride = Index{1} << p.stem.size();
  for (int axis = 1; axis < 3; ++axis) {
    if (image.dim(axis) % stride != 0) {
      throw ShapeError("extract_levels", axis,
                       "image side " + std::to_string(image.dim(axis)) +
                           " is not divisible by the backbone stride " + std::to_string(stride));
    }
  }
  Tensor<T> x = image;
  for (const auto& layer : p.stem) {
    const int k = static_cast<int>(layer.kernel.dim(2));
    x = relu(conv2d(x, layer.kernel, layer.bias, (k - 1) / 2, 2));
  }
  std::vector<Tensor<T>> taps;
  for (const auto& layer : p.blocks) {
    const int k = static_cast<int>(layer.kernel.dim(2));
    x = relu(conv2d(x, layer.kernel, layer.bias, (k - 1) / 2));
    taps.push_back(x);
  }
  std::vector<Tensor<T>> levels;
  for (std::size_t i = taps.size(); i-- > 0;) {
    levels.push_back(conv2d(taps[i], p.projections[i].kernel, p.projections[i].bias, 0));
  }
  return levels;
}

template struct BackboneParams<float>;
template struct BackboneParams<double>;
template std::vector<Tensor<float>> extract_levels(const Tensor<float>&, const BackboneParams<float>&);
template std::vector<Tensor<double>> extract_levels(const Tensor<double>&, const BackboneParams<double>&);

}  // namespace refseg
