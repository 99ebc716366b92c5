// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "harmoclip/errors.hpp"

namespace harmoclip {

/// Reserved vocabulary slots.
struct SpecialTokens {
    static constexpr int pad = 0;
    static constexpr int eot = 1;
    static constexpr int unk = 2;
    static constexpr int first_word = 3;
};

/// One tokenized text. ids may contain PAD entries after the EOT position;
/// nothing may follow except PAD, and exactly one EOT is present.
struct TokenSequence {
    std::vector<int> ids;
    int eot_index = 0;

    int length() const { return static_cast<int>(ids.size()); }

    void validate(int vocab_size, int max_text_len) const;
};

/// Word table with reserved {PAD, EOT, UNK} ids. Word ids are assigned in
/// first-seen order, so corpora built from identical inputs get identical
/// tables.
class Vocabulary {
public:
    Vocabulary();

    /// Adds a word if absent; returns its id either way.
    int add(const std::string& word);
    /// Id of a word, UNK when unknown.
    int id(const std::string& word) const;
    bool contains(const std::string& word) const;
    const std::string& word(int id) const;
    int size() const { return static_cast<int>(words_.size()); }

    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

/// Lowercase word-level tokenizer: alphanumeric runs are words, everything
/// else separates. One caption word maps to exactly one token.
namespace tokenizer {

std::vector<std::string> split_words(const std::string& text);

/// words + EOT, truncated to max_text_len tokens (EOT always kept last).
TokenSequence encode(const std::string& text, const Vocabulary& vocab, int max_text_len);

Vocabulary build_vocab(const std::vector<std::string>& texts,
                       const std::vector<std::string>& extra_words = {});

}  // namespace tokenizer

}  // namespace harmoclip
