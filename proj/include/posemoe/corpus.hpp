// SPDX-License-Identifier: Apache-2.0
// Seeded character-level text from a small grammar, and window batching.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "posemoe/rng.hpp"

namespace posemoe {

/// Space, period, then a–z.
inline constexpr std::size_t kCorpusVocab = 28;

std::int32_t encode_char(char c);
char decode_char(std::int32_t id);
std::vector<std::int32_t> encode_text(const std::string& text);
std::string decode_text(const std::vector<std::int32_t>& ids);

enum class CorpusDomain {
    /// Animal sentences with number agreement.
    General,
    /// Tabletop scene descriptions and pick-and-place commands.
    Tabletop,
};

/// At least `n_chars` characters of whole sentences, deterministic in the seed.
std::string generate_text(CorpusDomain domain, std::uint64_t seed, std::size_t n_chars);

struct TokenCorpus {
    std::vector<std::int32_t> train;
    std::vector<std::int32_t> val;
};

/// Train and validation streams come from independent derived seeds.
TokenCorpus make_corpus(CorpusDomain domain, std::uint64_t seed, std::size_t train_chars, std::size_t val_chars);

/// `batch` random windows of seq_len + 1 tokens, concatenated.
std::vector<std::int32_t> sample_windows(const std::vector<std::int32_t>& tokens, std::size_t batch,
                                         std::size_t seq_len, Rng& rng);

/// Consecutive non-overlapping windows of seq_len + 1 tokens, at most max_windows.
std::vector<std::int32_t> fixed_windows(const std::vector<std::int32_t>& tokens, std::size_t seq_len,
                                        std::size_t max_windows);

}  // namespace posemoe
