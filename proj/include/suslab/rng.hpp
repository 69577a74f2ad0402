#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace suslab {

/// Mix two 64-bit values into a derived seed (splitmix64 finalizer).
/// Used to branch independent RNG streams from one run seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic RNG. mt19937_64 output is fully specified by the standard,
/// and all value mappings here avoid std::*_distribution (whose results are
/// implementation-defined), so streams are bit-reproducible everywhere.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0,1) with 53-bit resolution.
    double next_uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    /// Standard normal via Box-Muller; caches the paired deviate.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = next_uniform();
        } while (u1 <= 0.0);
        u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform integer in [0, n). Unbiased via rejection on the top range.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Fisher-Yates shuffle with this stream.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace suslab
