#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace cartolab {

// Deterministic RNG facade. The standard <random> distributions are
// implementation-defined, so byte-identical runs across toolchains require
// owning the sampling arithmetic; only the mt19937_64 core is reused in
// spirit (here: splitmix64 + xoshiro-free direct use of a 64-bit state walk).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    std::uint64_t next_u64() {
        // splitmix64: tiny, well dispersed, trivially portable.
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n); n > 0. Rejection-free multiply-shift is not
    // needed at our scales; modulo bias is < 2^-40 for n < 2^24 but we reject
    // anyway to keep the draw exact.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do { v = next_u64(); } while (v >= limit);
        return v % n;
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Marsaglia polar method; deterministic given the state walk.
    double normal() {
        if (have_spare_) { have_spare_ = false; return spare_; }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    // Fisher–Yates; explicit so the permutation does not depend on the
    // standard library's std::shuffle choices.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(v[i - 1], v[j]);
        }
    }

    // First k of a shuffled index range: deterministic sample w/o replacement.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    // Derived stream: stable sub-seed for a named rep so parallel and serial
    // bootstrap schedules draw identical numbers.
    Rng derive(std::string_view tag, std::uint64_t index) const;

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cartolab
