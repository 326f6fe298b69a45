#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace revolv {

// Deterministic random source. mt19937_64 is bit-exact across platforms and
// the distributions here are hand-rolled so streams never depend on the
// standard library's implementation-defined samplers.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed), seed_material_(seed) {}

    uint64_t bits() { return engine_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform with the given standard deviation, mean zero
    double uniform_sd(double sd) { return uniform(-sd * 1.7320508075688772, sd * 1.7320508075688772); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(engine_() % static_cast<uint64_t>(hi - lo + 1));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Marsaglia polar method with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = uniform(-1.0, 1.0);
            v = uniform(-1.0, 1.0);
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Independent substream keyed by (tag, index); stable against changes in
    // how much randomness other parts of the generator consume.
    Rng fork(std::string_view tag, uint64_t index = 0) const {
        uint64_t h = 0xcbf29ce484222325ull ^ seed_material_;
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        return Rng(h, h ^ 0x5851f42d4c957f2dull);
    }

private:
    Rng(uint64_t seed, uint64_t material) : engine_(seed), seed_material_(material) {}

    std::mt19937_64 engine_;
    uint64_t seed_material_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace revolv
