#include "mspa/random.hpp"

#include <sstream>
#include <stdexcept>

namespace mspa {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index) {
    std::uint64_t z = seed ^ fnv1a64(purpose) ^ (index * 0x9e3779b97f4a7c15ull);
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::vector<std::uint64_t> rng_state_words(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    std::istringstream is(os.str());
    std::vector<std::uint64_t> words;
    std::uint64_t w = 0;
    while (is >> w) words.push_back(w);
    return words;
}

Rng rng_from_state_words(const std::vector<std::uint64_t>& words) {
    std::ostringstream os;
    for (std::size_t i = 0; i < words.size(); ++i) os << (i ? " " : "") << words[i];
    std::istringstream is(os.str());
    Rng rng;
    is >> rng;
    if (is.fail()) throw std::runtime_error("corrupt random engine state");
    return rng;
}

}  // namespace mspa
