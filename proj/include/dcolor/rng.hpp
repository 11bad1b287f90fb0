#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace dcolor {

// Seeded generator with portable uniform/normal conversions. The engine is
// std::mt19937_64; the distributions are implemented here so that streams are
// identical across standard library implementations, and carry no cached
// state beyond the engine (which makes the state checkpointable as text).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t nextU64() { return engine_(); }
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Standard normal via Box-Muller, one value per two uniforms.
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }

    std::string state() const;
    void setState(const std::string& s);

private:
    std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);

// Sub-seed for a named stage: splitmix64(seed ^ fnv1a64(stage)). Keeps stages
// independent yet reproducible from one configured seed.
std::uint64_t deriveSeed(std::uint64_t seed, std::string_view stage);

} // namespace dcolor
