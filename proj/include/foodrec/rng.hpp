#ifndef FOODREC_RNG_HPP
#define FOODREC_RNG_HPP

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace foodrec {

/// Deterministic splitmix64 generator. One u64 of state; cheap to copy,
/// bit-reproducible across platforms.
class Rng {
public:
    Rng() = default;
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t state() const { return state_; }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1): top 53 bits of the mixed output.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double next_range(double lo, double hi) {
        return lo + next_double() * (hi - lo);
    }

    /// Uniform index in [0, n). n must be > 0.
    std::size_t next_index(std::size_t n) {
        std::size_t i = static_cast<std::size_t>(next_double() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

    /// Standard normal via Box-Muller. Draws two uniforms per pair; the
    /// second value is cached so consecutive calls consume draws evenly.
    double next_normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    /// Fisher-Yates shuffle, consuming n-1 index draws.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = next_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_ = 0;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

/// Functional form: returns the advanced generator plus n uniforms in [0,1).
inline std::pair<Rng, std::vector<double>> rng_uniform(Rng rng, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = rng.next_double();
    return {rng, std::move(out)};
}

} // namespace foodrec

#endif
