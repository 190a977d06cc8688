#include "segmenter/rng.hpp"

#include <cmath>

namespace segmenter {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Rng make_stream(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  const std::uint64_t tag = fnv1a(name);
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(tag),
                    std::uint32_t(tag >> 32), std::uint32_t(index), std::uint32_t(index >> 32)};
  return Rng(seq);
}

// std:: distributions are implementation-defined; these are not.
double uniform(Rng& rng, double lo, double hi) {
  const double u = double(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

bool bernoulli(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

double normal(Rng& rng) {
  constexpr double kTwoPi = 6.283185307179586;
  for (;;) {
    const double u1 = uniform(rng, 0.0, 1.0);
    const double u2 = uniform(rng, 0.0, 1.0);
    if (u1 > 0.0) return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }
}

double truncated_normal(Rng& rng, double std) {
  for (;;) {
    const double z = normal(rng);
    if (std::abs(z) <= 2.0) return z * std;
  }
}

}  // namespace segmenter
