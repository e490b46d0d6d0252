#pragma once

#include "refseg/language.hpp"
#include "refseg/recurrent.hpp"

#include <vector>

namespace refseg {

inline constexpr Index kSpatialChannels = 8;

/// 8-channel coordinate map [8, H, W]. Channels 0-2 hold the left edge,
/// center and right edge of each cell column, channels 3-5 the top edge,
/// center and bottom edge of each cell row, all scaled so the image spans
/// [-1, 1]; channels 6 and 7 hold the relative cell width 1/W and height 1/H.
template <typename T>
Tensor<T> spatial_coords(Index width, Index height);

/// [V; spatial; r_l tiled over every cell] along channels.
template <typename T>
Tensor<T> build_word_multimodal(const Tensor<T>& visual, const Tensor<T>& spatial,
                                const Tensor<T>& word);

/// ConvLSTM step whose cell update is weighted by the word attention a
/// (a single-element tensor in [0, 1]):
///   C' = a * (i . g) + (1 - a) * (f . C)
///   H' = o . tanh(C')
template <typename T>
RecurrentState<T> modulated_convlstm_step(const Tensor<T>& multimodal, const Tensor<T>& attention,
                                          const RecurrentState<T>& state,
                                          const ConvLstmParams<T>& p);

template <typename T>
struct EncoderOutput {
  Tensor<T> final_hidden;
  /// Hidden state after each word, filled only when requested.
  std::vector<Tensor<T>> step_hidden;
};

/// Runs the modulated ConvLSTM over the words in order, starting from a zero
/// state, over visual features [C_v, H, W].
template <typename T>
EncoderOutput<T> encode(const Tensor<T>& visual, const WordFeatures<T>& words,
                        const ConvLstmParams<T>& p, bool keep_steps = false);

}  // namespace refseg
