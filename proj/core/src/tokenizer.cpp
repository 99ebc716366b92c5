// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include "harmoclip/tokenizer.hpp"

#include <algorithm>
#include <cctype>

namespace harmoclip {

void TokenSequence::validate(int vocab_size, int max_text_len) const {
    if (ids.empty()) throw InputError("TokenSequence: empty");
    if (length() > max_text_len)
        throw InputError("TokenSequence: length " + std::to_string(length()) +
                         " exceeds max_text_len " + std::to_string(max_text_len));
    int eot_count = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab_size)
            throw InputError("TokenSequence: id out of vocabulary range");
        if (ids[i] == SpecialTokens::eot) ++eot_count;
        if (static_cast<int>(i) > eot_index && ids[i] != SpecialTokens::pad)
            throw InputError("TokenSequence: non-PAD token after EOT");
    }
    if (eot_count != 1) throw InputError("TokenSequence: exactly one EOT required");
    if (eot_index < 0 || eot_index >= length() || ids[eot_index] != SpecialTokens::eot)
        throw InputError("TokenSequence: eot_index does not point at EOT");
}

Vocabulary::Vocabulary() : words_{"<pad>", "<eot>", "<unk>"} {
    for (int i = 0; i < static_cast<int>(words_.size()); ++i) index_[words_[i]] = i;
}

int Vocabulary::add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    words_.push_back(word);
    index_[word] = id;
    return id;
}

int Vocabulary::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? SpecialTokens::unk : it->second;
}

bool Vocabulary::contains(const std::string& word) const { return index_.count(word) > 0; }

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || id >= size()) throw InputError("Vocabulary: id out of range");
    return words_[static_cast<size_t>(id)];
}

namespace tokenizer {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string current;
    for (unsigned char ch : text) {
        if (std::isalnum(ch)) {
            current.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

TokenSequence encode(const std::string& text, const Vocabulary& vocab, int max_text_len) {
    if (max_text_len < 1) throw ConfigError("tokenizer: max_text_len must be >= 1");
    auto words = split_words(text);
    const int keep = std::min<int>(static_cast<int>(words.size()), max_text_len - 1);
    TokenSequence seq;
    seq.ids.reserve(static_cast<size_t>(keep) + 1);
    for (int i = 0; i < keep; ++i) seq.ids.push_back(vocab.id(words[static_cast<size_t>(i)]));
    seq.ids.push_back(SpecialTokens::eot);
    seq.eot_index = keep;
    return seq;
}

Vocabulary build_vocab(const std::vector<std::string>& texts,
                       const std::vector<std::string>& extra_words) {
    Vocabulary vocab;
    for (const auto& t : texts)
        for (const auto& w : split_words(t)) vocab.add(w);
    for (const auto& t : extra_words)
        for (const auto& w : split_words(t)) vocab.add(w);
    return vocab;
}

}  // namespace tokenizer

}  // namespace harmoclip
