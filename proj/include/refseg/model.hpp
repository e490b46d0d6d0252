#pragma once

#include "refseg/backbone.hpp"
#include "refseg/decoder.hpp"
#include "refseg/language.hpp"
#include "refseg/multimodal.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace refseg {

/// Every size that shapes the network. `vocab_size` comes from the
/// vocabulary the model is trained with.
struct ModelDims {
  int vocab_size = 1;
  Index embed = 32;
  Index lstm_hidden = 16;  // C_r = 2 * lstm_hidden
  Index attention = 16;    // C_a
  Index visual = 32;       // C_v
  Index encoder_hidden = 32;  // C_s
  Index decoder_hidden = 16;  // C_d
  int conv_kernel = 3;
  int attention_kernel = kSpatialAttentionKernel;
  Index image_size = 64;
  int max_length = 12;
  bool share_encoder_params = false;
  BackboneConfig backbone;

  int levels() const { return backbone.blocks; }
  Index word_features() const { return 2 * lstm_hidden; }
  Index feature_size() const { return image_size / backbone.stride(); }
  Index multimodal_channels() const { return visual + kSpatialChannels + word_features(); }

  static ModelDims desk();
  static ModelDims paper();
  /// Tiny sizes used by the finite-difference suites.
  static ModelDims toy();
  static ModelDims profile(const std::string& name);

  void validate() const;
};

template <typename T>
struct ModelParams {
  LanguageParams<T> language;
  BackboneParams<T> backbone;
  std::vector<ConvLstmParams<T>> encoders;  // one per level, or one when shared
  std::vector<SpatialAttentionParams<T>> attention;  // one per level
  ConvLstmParams<T> decoder;
  MaskHead<T> head;

  static ModelParams init(const ModelDims& dims, std::uint64_t seed);

  const ConvLstmParams<T>& encoder_for(int level) const {
    return encoders.size() == 1 ? encoders.front() : encoders[static_cast<std::size_t>(level)];
  }

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    self.language.visit("language", f);
    self.backbone.visit("backbone", f);
    for (std::size_t i = 0; i < self.encoders.size(); ++i) self.encoders[i].visit("encoder" + std::to_string(i), f);
    for (std::size_t i = 0; i < self.attention.size(); ++i) self.attention[i].visit("attention" + std::to_string(i), f);
    self.decoder.visit("decoder", f);
    self.head.visit("head", f);
  }
};

/// Parameter names in visit order.
template <typename T>
std::vector<std::string> parameter_names(const ModelParams<T>& params);

/// Copy of `params` whose every tensor is watched on `tape`.
template <typename T>
ModelParams<T> watch_all(const ModelParams<T>& params, Tape<T>& tape);

template <typename T>
struct ForwardResult {
  WordFeatures<T> words;
  std::vector<Tensor<T>> visual_levels;      // backbone output, deepest first
  std::vector<EncoderOutput<T>> encoded;     // encoder output per level
  std::vector<Tensor<T>> spatial_gates;      // [1, H, W] per level
  std::vector<Tensor<T>> attended;           // gated encoder output per level
  DecoderOutput<T> decoded;
  SegmentationOutput<T> output;
};

/// Full pipeline: language encoder, backbone, per-level multimodal encoder,
/// spatial attention, decoder, mask head.
template <typename T>
ForwardResult<T> forward(const ModelParams<T>& params, const ModelDims& dims, const Tensor<T>& image,
                         const TokenSequence& tokens, bool keep_steps = false);

}  // namespace refseg
