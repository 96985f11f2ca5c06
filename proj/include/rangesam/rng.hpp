#pragma once
#include <cmath>
#include <cstdint>

// Deterministic RNG used everywhere stochastic behavior is needed.
// splitmix64-based so streams can be derived statelessly from
// (seed, counter) pairs; a training step's randomness depends only on
// the run seed and the step index, which makes checkpoint resume exact.
namespace rangesam {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // standard normal via Box-Muller
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // derive an independent stream, e.g. per training step
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        Rng mix(seed);
        (void)mix.next_u64();
        Rng out(mix.next_u64() ^ (stream * 0xd6e8feb86659fd93ULL + 0xa5a5a5a5a5a5a5a5ULL));
        (void)out.next_u64();
        return out;
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace rangesam
