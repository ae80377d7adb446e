#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "csg/autograd.hpp"
#include "csg/common.hpp"
#include "csg/corpus.hpp"

namespace csg {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;

  static std::string slot_token(const std::string& slot) { return "<slot:" + slot + ">"; }

  Vocabulary() : Vocabulary(std::vector<std::string>{}, std::vector<std::string>{}) {}

  Vocabulary(const std::vector<std::string>& slots, const std::vector<std::string>& words) {
    for (const char* s : {"<pad>", "UNK", "<sos>", "<eos>"}) add(s);
    for (const auto& s : slots) add(slot_token(s));
    for (const auto& w : words) add(w);
  }

  int size() const { return static_cast<int>(index_to_word_.size()); }

  bool contains(const std::string& w) const { return word_to_index_.count(w) > 0; }

  // A word is known when it has its own row; the UNK literal maps to the
  // shared UNK row and therefore does not count.
  bool is_known(const std::string& w) const {
    auto it = word_to_index_.find(w);
    return it != word_to_index_.end() && it->second != kUnk;
  }

  int index(const std::string& w) const {
    auto it = word_to_index_.find(w);
    return it == word_to_index_.end() ? kUnk : it->second;
  }

  const std::string& word(int i) const {
    if (i < 0 || i >= size())
      throw std::out_of_range("vocabulary index " + std::to_string(i) + " out of range [0," +
                              std::to_string(size()) + ")");
    return index_to_word_[i];
  }

  int slot_index(const std::string& slot) const {
    auto it = word_to_index_.find(slot_token(slot));
    if (it == word_to_index_.end()) throw SchemaError("slot '" + slot + "' has no vocabulary token");
    return it->second;
  }

  bool is_special(int i) const {
    return i < kNumSpecials || index_to_word_[i].rfind("<slot:", 0) == 0;
  }

  std::vector<int> encode(std::span<const std::string> tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(index(t));
    return out;
  }

  std::vector<std::string> decode(std::span<const int> indices) const {
    std::vector<std::string> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(word(i));
    return out;
  }

  const std::vector<std::string>& words() const { return index_to_word_; }

  nlohmann::json to_json() const { return index_to_word_; }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v(EmptyTag{});
    for (const auto& w : j) {
      if (!v.add(w.get<std::string>())) throw ParseError("duplicate vocabulary entry");
    }
    if (v.size() < kNumSpecials || v.word(kUnk) != kUnkToken)
      throw ParseError("vocabulary JSON lacks the special tokens");
    return v;
  }

  bool operator==(const Vocabulary& o) const { return index_to_word_ == o.index_to_word_; }

 private:
  struct EmptyTag {};
  explicit Vocabulary(EmptyTag) {}

  bool add(const std::string& w) {
    if (word_to_index_.count(w)) return false;
    word_to_index_.emplace(w, size());
    index_to_word_.push_back(w);
    return true;
  }

  std::unordered_map<std::string, int> word_to_index_;
  std::vector<std::string> index_to_word_;
};

// Specials, one token per schema slot, then every training word (utterances
// and gold values) seen at least `min_freq` times, most frequent first.
inline Vocabulary build_vocab(const Corpus& corpus, int min_freq = 1) {
  if (corpus.train.empty()) throw ConfigError("build_vocab: training split is empty");
  std::map<std::string, long> freq;
  for (const auto& d : corpus.train) {
    for (const auto& t : d.turns) {
      for (const auto* u : turn_utterances(t))
        for (const auto& w : u->tokens) ++freq[w];
      for (const auto& [slot, v] : t.gold_state.entries())
        for (const auto& w : v.words) ++freq[w];
    }
  }
  std::set<std::string> excluded(corpus.excluded_words.begin(), corpus.excluded_words.end());
  excluded.insert(std::string(kUnkToken));
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [w, n] : freq)
    if (n >= min_freq && !excluded.count(w)) kept.emplace_back(w, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [w, n] : kept) words.push_back(w);
  return Vocabulary(corpus.schema, words);
}

// Word embedding table: |V| x d_emb, PAD row pinned at zero.
template <typename T>
using EmbeddingTable = ad::Parameter<T>;

template <typename T>
EmbeddingTable<T> make_embedding_table(int vocab_size, int d_emb, Rng& rng,
                                       T init_range = T(0.1)) {
  EmbeddingTable<T> table("embedding", vocab_size, d_emb);
  for (Eigen::Index i = 0; i < table.value.rows(); ++i)
    for (Eigen::Index j = 0; j < table.value.cols(); ++j)
      table.value(i, j) = static_cast<T>((2.0 * uniform_real(rng) - 1.0) * init_range);
  table.value.row(Vocabulary::kPad).setZero();
  table.frozen_rows = {Vocabulary::kPad};
  return table;
}

template <typename T>
ad::Vec<T> lookup_embedding(const EmbeddingTable<T>& table, int index) {
  if (index < 0 || index >= table.value.rows())
    throw std::out_of_range("embedding index " + std::to_string(index) + " out of range");
  return table.value.row(index).transpose();
}

}  // namespace csg
