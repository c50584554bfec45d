#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oflow {

/// Deterministic RNG. mt19937_64 has a fully specified output sequence, and the
/// value mappings below avoid std::*_distribution, whose algorithms are
/// implementation-defined; the same seed therefore reproduces the same stream
/// on any conforming standard library.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0,1) with 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Inclusive integer range.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(eng_() % span);
    }

    /// Standard normal via Box-Muller (pair cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool coin(double p_true) { return uniform() < p_true; }

    /// Derive an independent child stream keyed on (construction seed, tag);
    /// per-phantom / per-purpose streams keep parallel generation reproducible.
    Rng fork(uint64_t tag) const {
        uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ull + tag * 0xD1B54A32D192ED03ull);
        x ^= x >> 30; x *= 0xBF58476D1CE4E5B9ull;
        x ^= x >> 27; x *= 0x94D049BB133111EBull;
        x ^= x >> 31;
        return Rng(x);
    }

  private:
    uint64_t seed_;
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace oflow
