#pragma once

#include <cstdint>
#include <random>

#include "spdm/types.hpp"

namespace spdm {

/// Independent engine keyed by (seed, stream, substream). Regenerating a key
/// always yields the same draws, so noise can be recomputed on demand.
std::mt19937_64 rng_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0);

Vector standard_normal(std::mt19937_64& rng, std::size_t n);

/// Mixes two words into a derived seed (SplitMix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace spdm
