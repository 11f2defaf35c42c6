#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace mspa {

using Rng = std::mt19937_64;

// Independent stream seed for (seed, purpose); splitmix64 finalizer over an FNV-1a tag hash.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

std::uint64_t fnv1a64(std::string_view bytes);

// Engine state as raw words, for checkpointing.
std::vector<std::uint64_t> rng_state_words(const Rng& rng);
Rng rng_from_state_words(const std::vector<std::uint64_t>& words);

}  // namespace mspa
