#pragma once

#include <cstdint>

namespace msmpam {

// Counter-based, splittable RNG. Every simulation run owns an independent
// stream derived from (seed, run_index), so permuting run execution order
// (or the thread count) never changes a run's draws. Distribution transforms
// are hand-rolled: std::<distribution> output is implementation-defined and
// would break byte-identical reproducibility across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) { seed_state(seed); }

    // Stream for run `run_index` under master `seed`.
    static Rng for_run(std::uint64_t seed, std::uint64_t run_index) {
        return Rng(seed + 0x9e3779b97f4a7c15ULL * (run_index + 1));
    }

    std::uint64_t next_u64();

    // Uniform on (0,1): 53-bit mantissa, never exactly 0 or 1.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal();
    double exponential() ;                          // rate 1
    double weibull(double shape, double scale);     // S(t) = exp(-(t/scale)^shape)
    double gamma(double shape);                     // scale 1
    double beta(double a, double b);
    bool bernoulli(double p) { return uniform() < p; }
    int uniform_int(int lo, int hi);                // inclusive bounds

private:
    void seed_state(std::uint64_t seed);
    std::uint64_t s_[4];
    bool have_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

}  // namespace msmpam
