// SPDX-License-Identifier: Apache-2.0

#include "posemoe/corpus.hpp"

#include <array>
#include <string_view>

#include "posemoe/errors.hpp"

namespace posemoe {

std::int32_t encode_char(char c) {
    if (c == ' ') return 0;
    if (c == '.') return 1;
    if (c >= 'a' && c <= 'z') return 2 + (c - 'a');
    throw Error(std::string("corpus: character '") + c + "' outside vocabulary");
}

char decode_char(std::int32_t id) {
    if (id == 0) return ' ';
    if (id == 1) return '.';
    if (id >= 2 && id < static_cast<std::int32_t>(kCorpusVocab)) return static_cast<char>('a' + (id - 2));
    throw Error("corpus: token id " + std::to_string(id) + " outside vocabulary");
}

std::vector<std::int32_t> encode_text(const std::string& text) {
    std::vector<std::int32_t> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(encode_char(c));
    return ids;
}

std::string decode_text(const std::vector<std::int32_t>& ids) {
    std::string s;
    s.reserve(ids.size());
    for (auto id : ids) s.push_back(decode_char(id));
    return s;
}

namespace {

template <std::size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& words) {
    return words[rng.below(N)];
}

std::string general_sentence(Rng& rng) {
    static constexpr std::array<std::string_view, 6> animals{"cat", "dog", "bird", "fox", "horse", "frog"};
    static constexpr std::array<std::string_view, 5> verbs{"see", "chase", "like", "follow", "find"};
    static constexpr std::array<std::string_view, 4> adjectives{"small", "quick", "lazy", "old"};
    static constexpr std::array<std::string_view, 3> places{"garden", "river", "barn"};
    std::string s = "the ";
    if (rng.below(2)) s += std::string(pick(rng, adjectives)) + " ";
    const bool plural = rng.below(2);
    s += std::string(pick(rng, animals)) + (plural ? "s " : " ");
    s += std::string(pick(rng, verbs)) + (plural ? " " : "s ");
    s += "the " + std::string(pick(rng, animals));
    if (rng.below(3) == 0) s += " near the " + std::string(pick(rng, places));
    return s + ". ";
}

std::string tabletop_sentence(Rng& rng) {
    static constexpr std::array<std::string_view, 5> colors{"red", "blue", "green", "yellow", "purple"};
    static constexpr std::array<std::string_view, 4> relations{"left of", "right of", "behind", "on"};
    static constexpr std::array<std::string_view, 3> counts{"two", "three", "four"};
    switch (rng.below(4)) {
        case 0:
            return "put the " + std::string(pick(rng, colors)) + " block in the " + std::string(pick(rng, colors)) +
                   " bowl. ";
        case 1:
            return "the " + std::string(pick(rng, colors)) + " block is " + std::string(pick(rng, relations)) +
                   " the " + std::string(pick(rng, colors)) + " block. ";
        case 2: {
            if (rng.below(3) == 0) return "there is one " + std::string(pick(rng, colors)) + " block. ";
            return "there are " + std::string(pick(rng, counts)) + " " + std::string(pick(rng, colors)) +
                   " blocks. ";
        }
        default:
            return "stack the " + std::string(pick(rng, colors)) + " block on the " +
                   std::string(pick(rng, colors)) + " block. ";
    }
}

}  // namespace

std::string generate_text(CorpusDomain domain, std::uint64_t seed, std::size_t n_chars) {
    Rng rng(seed);
    std::string text;
    while (text.size() < n_chars) {
        text += domain == CorpusDomain::General ? general_sentence(rng) : tabletop_sentence(rng);
    }
    return text;
}

TokenCorpus make_corpus(CorpusDomain domain, std::uint64_t seed, std::size_t train_chars, std::size_t val_chars) {
    TokenCorpus c;
    c.train = encode_text(generate_text(domain, Rng::derive(seed, 1), train_chars));
    c.val = encode_text(generate_text(domain, Rng::derive(seed, 2), val_chars));
    return c;
}

std::vector<std::int32_t> sample_windows(const std::vector<std::int32_t>& tokens, std::size_t batch,
                                         std::size_t seq_len, Rng& rng) {
    const std::size_t w = seq_len + 1;
    if (tokens.size() < w) throw Error("corpus: stream shorter than one window");
    std::vector<std::int32_t> out;
    out.reserve(batch * w);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t start = rng.below(tokens.size() - w + 1);
        out.insert(out.end(), tokens.begin() + start, tokens.begin() + start + w);
    }
    return out;
}

std::vector<std::int32_t> fixed_windows(const std::vector<std::int32_t>& tokens, std::size_t seq_len,
                                        std::size_t max_windows) {
    const std::size_t w = seq_len + 1;
    const std::size_t n = std::min(max_windows, tokens.size() / w);
    if (n == 0) throw Error("corpus: stream shorter than one window");
    return {tokens.begin(), tokens.begin() + n * w};
}

}  // namespace posemoe
