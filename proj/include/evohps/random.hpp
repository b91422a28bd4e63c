#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace evohps {

// Every stochastic routine takes an Rng by reference; there is no global stream.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent seed from a master seed, a run id and two indices.
/// Used for per-individual training seeds so results never depend on which
/// worker ran a job or in what order.
std::uint64_t derive_seed(std::uint64_t master, std::string_view run_id, std::uint64_t a,
                          std::uint64_t b);

/// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

/// Uniform index in [0, n). n must be positive.
std::size_t uniform_index(Rng& rng, std::size_t n);

double standard_normal(Rng& rng);

}  // namespace evohps
