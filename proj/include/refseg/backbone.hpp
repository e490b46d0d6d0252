#pragma once

#include "refseg/recurrent.hpp"

#include <string>
#include <vector>

namespace refseg {

/// Small trainable conv stack: stride-2 stem convolutions, then `blocks`
/// same-size 3x3 blocks with a tap after each. Each tap is projected by its
/// own 1x1 convolution to `visual_channels`.
struct BackboneConfig {
  std::vector<Index> stem_widths{16, 32};
  Index block_width = 32;
  int blocks = 3;
  Index visual_channels = 32;
  int kernel = 3;

  /// Product of the stem strides; image sides must be divisible by it.
  Index stride() const { return Index{1} << stem_widths.size(); }
  /// Receptive field (in input pixels) of each tap, shallowest first.
  std::vector<Index> tap_receptive_fields() const;
};

template <typename T>
struct ConvLayer {
  Tensor<T> kernel;
  Tensor<T> bias;

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
struct BackboneParams {
  std::vector<ConvLayer<T>> stem;
  std::vector<ConvLayer<T>> blocks;
  std::vector<ConvLayer<T>> projections;  // one per tap, shallowest first

  static BackboneParams init(const BackboneConfig& config, Rng& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < stem.size(); ++i) stem[i].visit(prefix + ".stem" + std::to_string(i), f);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), f);
    for (std::size_t i = 0; i < projections.size(); ++i) projections[i].visit(prefix + ".proj" + std::to_string(i), f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    for (std::size_t i = 0; i < stem.size(); ++i) stem[i].visit(prefix + ".stem" + std::to_string(i), f);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), f);
    for (std::size_t i = 0; i < projections.size(); ++i) projections[i].visit(prefix + ".proj" + std::to_string(i), f);
  }
};

/// Feature levels [C_v, H / stride, W / stride], deepest tap first.
template <typename T>
std::vector<Tensor<T>> extract_levels(const Tensor<T>& image, const BackboneParams<T>& p);

}  // namespace refseg
