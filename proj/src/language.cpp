#include "refseg/language.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace refseg {

TokenSequence::TokenSequence(std::vector<int> token_ids, int max_length) : ids(std::move(token_ids)) {
  if (ids.empty()) throw std::invalid_argument("token sequence is empty");
  if (static_cast<int>(ids.size()) > max_length) {
    throw std::invalid_argument("token sequence has " + std::to_string(ids.size()) +
                                " words, maximum is " + std::to_string(max_length));
  }
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Vocabulary::Vocabulary() {
  words_.push_back(kUnknownWord);
  index_.emplace(kUnknownWord, kUnknownToken);
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words_without_unk) {
  Vocabulary v;
  for (const auto& w : words_without_unk) {
    if (w == kUnknownWord || v.index_.count(w)) {
      throw std::invalid_argument("vocabulary word repeated: " + w);
    }
    v.index_.emplace(w, static_cast<int>(v.words_.size()));
    v.words_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  std::set<std::string> seen;
  for (const auto& text : corpus) {
    for (auto& w : tokenize(text)) seen.insert(std::move(w));
  }
  seen.erase(kUnknownWord);
  return from_words(std::vector<std::string>(seen.begin(), seen.end()));
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnknownToken : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary id " + std::to_string(id));
  return words_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(std::string_view text, int max_length, int* unknown) const {
  std::vector<int> ids;
  int misses = 0;
  for (const auto& w : tokenize(text)) {
    int i = id(w);
    if (i == kUnknownToken) ++misses;
    ids.push_back(i);
  }
  if (unknown) *unknown = misses;
  return TokenSequence(std::move(ids), max_length);
}

template <typename T>
LanguageParams<T> LanguageParams<T>::init(int vocab, Index embed_dim, Index lstm_hidden,
                                          Index attention_dim, Rng& rng) {
  LanguageParams p;
  p.embedding = uniform_tensor<T>({vocab, embed_dim}, 1.0, rng);
  p.forward = LstmParams<T>::init(embed_dim, lstm_hidden, rng);
  p.backward = LstmParams<T>::init(embed_dim, lstm_hidden, rng);
  const Index features = 2 * lstm_hidden;
  p.attention.w_b = uniform_tensor<T>({attention_dim, features}, 1.0 / std::sqrt(double(features)), rng);
  p.attention.w_a = uniform_tensor<T>({attention_dim}, 1.0 / std::sqrt(double(attention_dim)), rng);
  return p;
}

template <typename T>
Tensor<T> embed(const TokenSequence& tokens, const Tensor<T>& table) {
  if (tokens.ids.empty()) throw std::invalid_argument("embed: empty token sequence");
  return gather_rows(table, std::span<const int>(tokens.ids));
}

template <typename T>
Tensor<T> attention_scores(const Tensor<T>& h, const AttentionHead<T>& head) {
  if (h.rank() != 2) throw ShapeError("word_attention", -1, "word features must be [L, C_r]");
  const Index length = h.dim(0);
  const Index att = head.w_b.dim(0);
  if (head.w_b.dim(1) != h.dim(1)) {
    throw ShapeError("word_attention", 1,
                     "w_b expects " + std::to_string(head.w_b.dim(1)) + " features, got " +
                         std::to_string(h.dim(1)));
  }
  if (head.w_a.shape() != Shape{att}) throw ShapeError("word_attention", 0, "w_a must be [C_a]");
  Tensor<T> hidden = tanh(matmul(h, transpose(head.w_b)));  // [L, C_a]
  return reshape(matmul(hidden, reshape(head.w_a, {att, 1})), {length});
}

template <typename T>
Tensor<T> word_attention(const Tensor<T>& h, const AttentionHead<T>& head) {
  return softmax(attention_scores(h, head));
}

template <typename T>
Tensor<T> reweight(const Tensor<T>& h, const Tensor<T>& a) {
  return scale_rows(h, a);
}

template <typename T>
WordFeatures<T> encode_expression(const TokenSequence& tokens, const LanguageParams<T>& p) {
  WordFeatures<T> out;
  out.h = bilstm_run(embed(tokens, p.embedding), p.forward, p.backward);
  out.a = word_attention(out.h, p.attention);
  out.r = reweight(out.h, out.a);
  return out;
}

#define REFSEG_INSTANTIATE_LANGUAGE(T)                                                  \
  template struct LanguageParams<T>;                                                    \
  template Tensor<T> embed(const TokenSequence&, const Tensor<T>&);                     \
  template Tensor<T> attention_scores(const Tensor<T>&, const AttentionHead<T>&);       \
  template Tensor<T> word_attention(const Tensor<T>&, const AttentionHead<T>&);         \
  template Tensor<T> reweight(const Tensor<T>&, const Tensor<T>&);                      \
  template WordFeatures<T> encode_expression(const TokenSequence&, const LanguageParams<T>&);

REFSEG_INSTANTIATE_LANGUAGE(float)
REFSEG_INSTANTIATE_LANGUAGE(double)

#undef REFSEG_INSTANTIATE_LANGUAGE

}  // namespace refseg
