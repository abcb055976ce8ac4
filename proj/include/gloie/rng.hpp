#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace gloie {

using Rng = std::mt19937_64;

// Fisher-Yates with explicit modulo draws, so the permutation depends only on
// the engine stream and not on std::shuffle internals.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace gloie
