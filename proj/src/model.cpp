#include "refseg/model.hpp"

#include <stdexcept>

namespace refseg {

ModelDims ModelDims::desk() { return ModelDims{}; }

ModelDims ModelDims::paper() {
  ModelDims d;
  d.embed = 1000;
  d.lstm_hidden = 500;
  d.attention = 500;
  d.visual = 1000;
  d.encoder_hidden = 1000;
  d.decoder_hidden = 500;
  d.image_size = 320;
  d.max_length = 20;
  d.backbone.stem_widths = {64, 128, 256};
  d.backbone.block_width = 256;
  d.backbone.visual_channels = 1000;
  return d;
}

ModelDims ModelDims::toy() {
  ModelDims d;
  d.embed = 3;
  d.lstm_hidden = 2;
  d.attention = 3;
  d.visual = 4;
  d.encoder_hidden = 3;
  d.decoder_hidden = 2;
  d.image_size = 32;
  d.max_length = 12;
  d.backbone.stem_widths = {3, 4};
  d.backbone.block_width = 4;
  d.backbone.blocks = 2;
  d.backbone.visual_channels = 4;
  return d;
}

ModelDims ModelDims::profile(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  if (name == "toy") return toy();
  throw std::invalid_argument("unknown dimension profile '" + name + "' (expected desk, paper or toy)");
}

void ModelDims::validate() const {
  auto positive = [](Index v, const char* what) {
    if (v <= 0) throw std::invalid_argument(std::string(what) + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(embed, "embed");
  positive(lstm_hidden, "lstm_hidden");
  positive(attention, "attention");
  positive(visual, "visual");
  positive(encoder_hidden, "encoder_hidden");
  positive(decoder_hidden, "decoder_hidden");
  positive(image_size, "image_size");
  positive(max_length, "max_length");
  if (conv_kernel % 2 == 0 || conv_kernel < 1) throw std::invalid_argument("conv_kernel must be odd");
  if (attention_kernel % 2 == 0 || attention_kernel < 1) {
    throw std::invalid_argument("attention_kernel must be odd");
  }
  if (backbone.blocks < 1) throw std::invalid_argument("at least one feature level is required");
  if (backbone.visual_channels != visual) {
    throw std::invalid_argument("backbone projection width must equal the visual channel count");
  }
  if (image_size % backbone.stride() != 0) {
    throw std::invalid_argument("image_size must be divisible by the backbone stride");
  }
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  Rng rng(seed);
  ModelParams p;
  p.language = LanguageParams<T>::init(dims.vocab_size, dims.embed, dims.lstm_hidden, dims.attention, rng);
  p.backbone = BackboneParams<T>::init(dims.backbone, rng);
  const int encoders = dims.share_encoder_params ? 1 : dims.levels();
  for (int i = 0; i < encoders; ++i) {
    p.encoders.push_back(ConvLstmParams<T>::init(dims.multimodal_channels(), dims.encoder_hidden,
                                                 dims.conv_kernel, rng));
  }
  for (int i = 0; i < dims.levels(); ++i) {
    p.attention.push_back(SpatialAttentionParams<T>::init(dims.encoder_hidden, dims.attention_kernel, rng));
  }
  p.decoder = ConvLstmParams<T>::init(dims.encoder_hidden, dims.decoder_hidden, dims.conv_kernel, rng);
  p.head = MaskHead<T>::init(dims.decoder_hidden, rng);
  return p;
}

template <typename T>
std::vector<std::string> parameter_names(const ModelParams<T>& params) {
  std::vector<std::string> names;
  params.visit([&](const std::string& name, const Tensor<T>&) { names.push_back(name); });
  return names;
}

template <typename T>
ModelParams<T> watch_all(const ModelParams<T>& params, Tape<T>& tape) {
  ModelParams<T> bound = params;
  bound.visit([&](const std::string&, Tensor<T>& t) { t = tape.watch(t); });
  return bound;
}

template <typename T>
ForwardResult<T> forward(const ModelParams<T>& params, const ModelDims& dims, const Tensor<T>& image,
                         const TokenSequence& tokens, bool keep_steps) {
  if (tokens.length() > dims.max_length) {
    throw std::invalid_argument("expression longer than the model's maximum length");
  }
  ForwardResult<T> r;
  r.words = encode_expression(tokens, params.language);
  r.visual_levels = extract_levels(image, params.backbone);
  for (std::size_t s = 0; s < r.visual_levels.size(); ++s) {
    const int level = static_cast<int>(s);
    r.encoded.push_back(encode(r.visual_levels[s], r.words, params.encoder_for(level), keep_steps));
    const auto& att = params.attention[s];
    Tensor<T> gate = spatial_gate(r.encoded.back().final_hidden, att);
    r.attended.push_back(mul_channels(gate, r.encoded.back().final_hidden));
    r.spatial_gates.push_back(std::move(gate));
  }
  r.decoded = decode(std::span<const Tensor<T>>(r.attended), params.decoder);
  r.output = predict_mask(r.decoded.final_hidden, params.head, image.dim(1), image.dim(2));
  return r;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template std::vector<std::string> parameter_names(const ModelParams<float>&);
template std::vector<std::string> parameter_names(const ModelParams<double>&);
template ModelParams<float> watch_all(const ModelParams<float>&, Tape<float>&);
template ModelParams<double> watch_all(const ModelParams<double>&, Tape<double>&);
template ForwardResult<float> forward(const ModelParams<float>&, const ModelDims&, const Tensor<float>&,
                                      const TokenSequence&, bool);
template ForwardResult<double> forward(const ModelParams<double>&, const ModelDims&,
                                       const Tensor<double>&, const TokenSequence&, bool);

}  // namespace refseg
