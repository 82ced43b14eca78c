#pragma once

#include <cstdint>
#include <string_view>

namespace dmplug {

// Splittable counter-based generator (splitmix64 core). A run owns one root
// seed; every stochastic consumer derives its own stream so adding a consumer
// never perturbs the draws seen by the others.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed0_(seed), state_(seed) {}

    uint64_t next_u64();

    // uniform in [0, 1)
    double uniform();

    // standard normal via Box-Muller; second draw of each pair is cached
    double normal();

    // uniform integer in [0, n)
    uint64_t below(uint64_t n);

    Rng derive(uint64_t stream) const;
    Rng derive(std::string_view stream) const;

    uint64_t root_seed() const { return seed0_; }

private:
    uint64_t seed0_;
    uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

} // namespace dmplug
