#include "refseg/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace refseg {
namespace {

class Moments {
 public:
  template <typename T>
  void add(const Tensor<T>& t) {
    const auto v = t.values().template cast<double>();
    n_ += static_cast<double>(v.size());
    sum_ += v.sum();
    sum_sq_ += v.square().sum();
  }

  double stddev() const {
    if (n_ == 0) return 0.0;
    const double mean = sum_ / n_;
    return std::sqrt(std::max(0.0, sum_sq_ / n_ - mean * mean));
  }

 private:
  double n_ = 0, sum_ = 0, sum_sq_ = 0;
};

// Factor that brings `m` to `want`; 1 when nothing was measured.
double factor(const Moments& m, double want) {
  const double s = m.stddev();
  return s > 0 ? want / s : 1.0;
}

template <typename T>
void rescale(Tensor<T>& t, double f) {
  t = scale(t, static_cast<T>(f));
}

// Scales input channels [first, first + count) of a [O, I, k, k] kernel.
template <typename T>
void rescale_block(Tensor<T>& kernel, Index first, Index count, double f) {
  Buffer<T> v = kernel.values();
  const Index out = kernel.dim(0), in = kernel.dim(1), taps = kernel.dim(2) * kernel.dim(3);
  for (Index o = 0; o < out; ++o) v.segment((o * in + first) * taps, count * taps) *= static_cast<T>(f);
  kernel = Tensor<T>(kernel.shape(), std::move(v));
}

template <typename T>
Tensor<T> block_conv(const Tensor<T>& x, const Tensor<T>& kernel, Index first, Index count) {
  const Index k = kernel.dim(2);
  return conv2d(x, slice(kernel, 1, first, count), Tensor<T>::zeros({kernel.dim(0)}), static_cast<int>((k - 1) / 2));
}

template <typename T>
void calibrate_language(LanguageParams<T>& p, std::span<const Example<T>> examples, double target) {
  LstmParams<T>* dirs[] = {&p.forward, &p.backward};
  for (int d = 0; d < 2; ++d) {
    Moments m;
    for (const auto& ex : examples) m.add(matmul(embed(ex.tokens, p.embedding), transpose(dirs[d]->w_input)));
    rescale(dirs[d]->w_input, factor(m, target));
  }
  const Index hf = p.forward.hidden_size(), hb = p.backward.hidden_size();
  Moments mf, mb;
  for (const auto& ex : examples) {
    const Tensor<T> h = bilstm_run(embed(ex.tokens, p.embedding), p.forward, p.backward);
    mf.add(matmul(slice(h, 1, 0, hf), transpose(p.forward.w_hidden)));
    mb.add(matmul(slice(h, 1, hf, hb), transpose(p.backward.w_hidden)));
  }
  rescale(p.forward.w_hidden, factor(mf, target));
  rescale(p.backward.w_hidden, factor(mb, target));
}

template <typename T>
void calibrate_projections(BackboneParams<T>& p, std::span<const Example<T>> examples) {
  std::vector<Moments> m(p.projections.size());
  for (const auto& ex : examples) {
    const auto levels = extract_levels(ex.image, p);
    for (std::size_t s = 0; s < levels.size(); ++s) m[levels.size() - 1 - s].add(levels[s]);
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double f = factor(m[i], 1.0);
    rescale(p.projections[i].kernel, f);
    rescale(p.projections[i].bias, f);
  }
}

template <typename T>
void calibrate_encoders(ModelParams<T>& p, std::span<const Example<T>> examples, double target) {
  struct Blocks {
    Moments visual, spatial, word, hidden;
  };
  std::vector<Blocks> m(p.encoders.size());
  for (const auto& ex : examples) {
    const auto words = encode_expression(ex.tokens, p.language);
    const auto levels = extract_levels(ex.image, p.backbone);
    for (std::size_t s = 0; s < levels.size(); ++s) {
      const auto& enc = p.encoder_for(static_cast<int>(s));
      Blocks& b = m[p.encoders.size() == 1 ? 0 : s];
      const Tensor<T>& v = levels[s];
      const Index cv = v.dim(0), height = v.dim(1), width = v.dim(2), cr = words.r.dim(1);
      b.visual.add(block_conv(v, enc.kernel, 0, cv));
      b.spatial.add(block_conv(spatial_coords<T>(width, height), enc.kernel, cv, kSpatialChannels));
      for (Index l = 0; l < words.r.dim(0); ++l) {
        const Tensor<T> tiled = tile_spatial(reshape(slice(words.r, 0, l, 1), {cr}), height, width);
        b.word.add(block_conv(tiled, enc.kernel, cv + kSpatialChannels, cr));
      }
      for (const auto& h : encode(v, words, enc, true).step_hidden) {
        b.hidden.add(block_conv(h, enc.kernel, cv + kSpatialChannels + cr, enc.hidden_channels()));
      }
    }
  }
  const Index cv = p.backbone.projections.front().kernel.dim(0), cr = p.language.feature_size();
  for (std::size_t e = 0; e < p.encoders.size(); ++e) {
    auto& kernel = p.encoders[e].kernel;
    const double part = target / 2;
    rescale_block(kernel, 0, cv, factor(m[e].visual, part));
    rescale_block(kernel, cv, kSpatialChannels, factor(m[e].spatial, part / 2));
    rescale_block(kernel, cv + kSpatialChannels, cr, factor(m[e].word, part));
    rescale_block(kernel, cv + kSpatialChannels + cr, p.encoders[e].hidden_channels(), factor(m[e].hidden, part));
  }
}

template <typename T>
void calibrate_decoder(ModelParams<T>& p, const ModelDims& dims, std::span<const Example<T>> examples, double target) {
  std::vector<Moments> gates(p.attention.size());
  Moments input, hidden;
  const Index cin = p.decoder.kernel.dim(1) - p.decoder.hidden_channels();
  for (const auto& ex : examples) {
    const auto f = forward(p, dims, ex.image, ex.tokens);
    for (std::size_t s = 0; s < f.encoded.size(); ++s) {
      gates[s].add(block_conv(f.encoded[s].final_hidden, p.attention[s].kernel, 0, f.encoded[s].final_hidden.dim(0)));
      input.add(block_conv(f.attended[s], p.decoder.kernel, 0, cin));
    }
    for (const auto& h : f.decoded.level_hidden) hidden.add(block_conv(h, p.decoder.kernel, cin, p.decoder.hidden_channels()));
  }
  for (std::size_t s = 0; s < gates.size(); ++s) rescale(p.attention[s].kernel, factor(gates[s], 1.0));
  rescale_block(p.decoder.kernel, 0, cin, factor(input, target / std::sqrt(2.0)));
  rescale_block(p.decoder.kernel, cin, p.decoder.hidden_channels(), factor(hidden, target / std::sqrt(2.0)));
}

template <typename T>
void calibrate_head(ModelParams<T>& p, const ModelDims& dims, std::span<const Example<T>> examples) {
  Moments logits;
  double foreground = 0, total = 0;
  for (const auto& ex : examples) {
    const auto f = forward(p, dims, ex.image, ex.tokens);
    logits.add(conv2d(f.decoded.final_hidden, p.head.kernel, Tensor<T>::zeros({1}), 0));
    foreground += ex.mask.values().template cast<double>().sum();
    total += static_cast<double>(ex.mask.size());
  }
  rescale(p.head.kernel, factor(logits, 1.0));
  const double prior = std::clamp(foreground / total, 1e-3, 1 - 1e-3);
  p.head.bias = Tensor<T>::constant({1}, static_cast<T>(std::log(prior / (1 - prior))));
}

}  // namespace

template <typename T>
void calibrate(ModelParams<T>& params, const ModelDims& dims, std::span<const Example<T>> examples, const CalibrationOptions& options) {
  if (examples.empty()) throw std::invalid_argument("calibrate: no examples");
  if (!(options.target_std > 0) || options.passes < 1) throw std::invalid_argument("calibrate: invalid options");
  for (int pass = 0; pass < options.passes; ++pass) calibrate_language(params.language, examples, options.target_std);
  calibrate_projections(params.backbone, examples);
  for (int pass = 0; pass < options.passes; ++pass) calibrate_encoders(params, examples, options.target_std);
  for (int pass = 0; pass < options.passes; ++pass) calibrate_decoder(params, dims, examples, options.target_std);
  calibrate_head(params, dims, examples);
}

template void calibrate(ModelParams<float>&, const ModelDims&, std::span<const Example<float>>, const CalibrationOptions&);
template void calibrate(ModelParams<double>&, const ModelDims&, std::span<const Example<double>>, const CalibrationOptions&);

}  // namespace refseg
