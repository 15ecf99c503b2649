#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "plane/core/error.hpp"

namespace plane::plm {

/// Word-level vocabulary: reserved placeholder tokens followed by the
/// sorted, de-duplicated words of the category names.
class Tokenizer {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kPrompt = 1;
  static constexpr std::size_t kDynamic = 2;

  Tokenizer() : Tokenizer(std::vector<std::string>{}) {}

  explicit Tokenizer(const std::vector<std::string>& categories) {
    words_ = {"[unk]", "[prompt]", "[dyn]"};
    std::vector<std::string> extra;
    for (const auto& c : categories)
      for (const auto& w : split(c)) extra.push_back(w);
    std::sort(extra.begin(), extra.end());
    extra.erase(std::unique(extra.begin(), extra.end()), extra.end());
    for (auto& w : extra)
      if (std::find(words_.begin(), words_.end(), w) == words_.end()) words_.push_back(w);
    for (std::size_t i = 0; i < words_.size(); ++i) ids_[words_[i]] = i;
  }

  static Tokenizer from_words(const std::vector<std::string>& words) {
    Tokenizer t;
    t.words_ = words;
    t.ids_.clear();
    for (std::size_t i = 0; i < words.size(); ++i) t.ids_[words[i]] = i;
    return t;
  }

  std::vector<std::size_t> tokenize(const std::string& text) const {
    std::vector<std::size_t> out;
    for (const auto& w : split(text)) {
      auto it = ids_.find(w);
      out.push_back(it == ids_.end() ? kUnk : it->second);
    }
    return out;
  }

  const std::string& word(std::size_t id) const {
    if (id >= words_.size()) throw Error("token id out of range");
    return words_[id];
  }

  std::size_t id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  /// Lowercased whitespace split.
  static std::vector<std::string> split(const std::string& text) {
    std::string lower = text;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    std::istringstream in(lower);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> ids_;
};

}  // namespace plane::plm
