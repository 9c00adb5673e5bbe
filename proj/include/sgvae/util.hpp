#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace sgvae {

// Runs body(i) for i in [0, n) on up to `threads` workers. Each index is
// visited exactly once; callers write results into per-index slots so the
// outcome does not depend on scheduling.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

// Per-stage seed: splitmix64(seed ^ fnv1a64(stage)). Every pipeline stage
// derives its generator from the single user seed this way.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage);

}  // namespace sgvae
