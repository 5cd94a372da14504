#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace vcm {

using Rng = std::mt19937_64;

/// Counter-based stream derivation (splitmix64 finalizer over the inputs).
/// Independent replications, folds and resamples each get their own stream,
/// so results do not depend on the order in which they are computed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t substream = 0);

/// Uniform integer in [0, bound) by rejection; bit-identical across
/// standard library implementations.
std::uint64_t uniform_index(Rng& rng, std::uint64_t bound);

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace vcm
