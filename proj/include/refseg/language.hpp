#pragma once

#include "refseg/recurrent.hpp"

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace refseg {

inline constexpr int kUnknownToken = 0;
inline constexpr const char* kUnknownWord = "<unk>";

/// Word ids of one referring expression. Construction enforces
/// 1 <= length <= max_length.
struct TokenSequence {
  std::vector<int> ids;

  TokenSequence() = default;
  TokenSequence(std::vector<int> ids, int max_length);

  Index length() const { return static_cast<Index>(ids.size()); }
};

/// Lower-cased whitespace tokenization.
std::vector<std::string> tokenize(std::string_view text);

/// Word <-> id table with <unk> at id 0. Built words are sorted so the table
/// depends only on the set of words seen.
class Vocabulary {
 public:
  Vocabulary();
  static Vocabulary build(const std::vector<std::string>& corpus);
  static Vocabulary from_words(const std::vector<std::string>& words_without_unk);

  int id(std::string_view word) const;
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  /// Tokenizes and maps `text`; `unknown` receives the number of <unk> ids.
  TokenSequence encode(std::string_view text, int max_length, int* unknown = nullptr) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

template <typename T>
struct AttentionHead {
  Tensor<T> w_b;  // [C_a, C_r]
  Tensor<T> w_a;  // [C_a]

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w_b", w_b);
    f(prefix + ".w_a", w_a);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".w_b", w_b);
    f(prefix + ".w_a", w_a);
  }
};

template <typename T>
struct LanguageParams {
  Tensor<T> embedding;  // [vocab, C_e]
  LstmParams<T> forward;
  LstmParams<T> backward;
  AttentionHead<T> attention;

  Index feature_size() const { return forward.hidden_size() + backward.hidden_size(); }

  static LanguageParams init(int vocab, Index embed, Index lstm_hidden, Index attention_dim, Rng& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".embedding", embedding);
    forward.visit(prefix + ".forward", f);
    backward.visit(prefix + ".backward", f);
    attention.visit(prefix + ".attention", f);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".embedding", embedding);
    forward.visit(prefix + ".forward", f);
    backward.visit(prefix + ".backward", f);
    attention.visit(prefix + ".attention", f);
  }
};

/// Per-word features: bidirectional hidden vectors h [L, C_r], attention
/// weights a [L] and reweighted features r [L, C_r].
template <typename T>
struct WordFeatures {
  Tensor<T> h;
  Tensor<T> a;
  Tensor<T> r;
};

template <typename T>
Tensor<T> embed(const TokenSequence& tokens, const Tensor<T>& table);

/// a = softmax_l(w_a . tanh(w_b h_l)); no bias terms.
template <typename T>
Tensor<T> word_attention(const Tensor<T>& h, const AttentionHead<T>& head);

/// Attention scores before normalization, one per word.
template <typename T>
Tensor<T> attention_scores(const Tensor<T>& h, const AttentionHead<T>& head);

template <typename T>
Tensor<T> reweight(const Tensor<T>& h, const Tensor<T>& a);

template <typename T>
WordFeatures<T> encode_expression(const TokenSequence& tokens, const LanguageParams<T>& p);

}  // namespace refseg
