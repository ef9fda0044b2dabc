#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fdg2s {

// Deterministic random source. All randomness in the project flows through
// seeded instances of this class so that runs are reproducible bit-for-bit.
// Gaussian draws use an explicit Box-Muller transform instead of
// std::normal_distribution, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Derive an independent stream; used to decouple e.g. corruption noise
    // from parameter initialization under a single top-level seed.
    Rng fork(std::uint64_t stream) {
        std::uint64_t z = gen_() + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 gen_;
};

} // namespace fdg2s
