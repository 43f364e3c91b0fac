#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace s4ecg {

using Rng = std::mt19937_64;

// Independent stream for (seed, tags...). Scheduling-independent, so parallel
// workers reproduce the serial result.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    for (const auto t : tags) {
        words.push_back(static_cast<std::uint32_t>(t));
        words.push_back(static_cast<std::uint32_t>(t >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

}  // namespace s4ecg
