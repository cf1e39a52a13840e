#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace belieflab {

using Rng = std::mt19937_64;

/// Deterministic child stream derived from a base seed and a path of indices,
/// so parallel or reordered work draws identical numbers.
inline Rng derive_rng(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * path.size());
  words.push_back(static_cast<std::uint32_t>(base));
  words.push_back(static_cast<std::uint32_t>(base >> 32));
  for (std::uint64_t p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline std::uint64_t draw_seed(Rng& rng) { return rng(); }

}  // namespace belieflab
