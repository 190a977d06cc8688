#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace segmenter {

using Rng = std::mt19937_64;

// Independent generator for a named sub-stream ("init", "augment",
// "stochastic_depth", ...) of a run seed. `index` distinguishes e.g. the
// iteration, so any stream can be recreated without replaying earlier ones.
Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

// Standard normal (Box-Muller).
double normal(Rng& rng);

// Normal(0, std) resampled until it lands within +-2 std.
double truncated_normal(Rng& rng, double std);

double uniform(Rng& rng, double lo, double hi);
bool bernoulli(Rng& rng, double p);

}  // namespace segmenter
