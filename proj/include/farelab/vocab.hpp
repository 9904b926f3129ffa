#pragma once

#include <map>
#include <string>
#include <vector>

#include "farelab/common.hpp"

namespace fare {

// Word-level synthetic vocabulary. Token ids are assigned in insertion order
// so a vocabulary built from the same word list is always identical.
class Vocab {
  public:
    Vocab() = default;

    int add(const std::string& word) {
        auto it = index_.find(word);
        if (it != index_.end()) return it->second;
        const int id = static_cast<int>(words_.size());
        words_.push_back(word);
        index_.emplace(word, id);
        return id;
    }

    int id(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end())
            throw InputError("vocab: unknown word '" + word + "'");
        return it->second;
    }

    bool contains(const std::string& word) const { return index_.count(word) > 0; }

    const std::string& word(int id) const {
        if (id < 0 || id >= static_cast<int>(words_.size()))
            throw InputError("vocab: token id out of range");
        return words_[static_cast<std::size_t>(id)];
    }

    int size() const { return static_cast<int>(words_.size()); }

    const std::vector<std::string>& words() const { return words_; }

    // Whitespace tokenization; every word must already be in the vocabulary.
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& tokens) const;

  private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

}  // namespace fare
