#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace decgan {

// Mixes (base, a, b) into a fresh 64-bit seed. Used to derive independent
// per-step / per-epoch / per-purpose streams from one run seed.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0) {
    uint64_t x = base + 0x9e3779b97f4a7c15ULL * (a + 1) + 0x94d049bb133111ebULL * (b + 1);
    // splitmix64 finalizer
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

// Deterministic RNG. mt19937_64 is bit-exact across platforms per the
// standard; the uniform/normal mappings below are hand-rolled so no
// implementation-defined distribution code sneaks in.
class RandomEngine {
public:
    explicit RandomEngine(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(gen_() % static_cast<uint64_t>(n));
    }

    // standard normal via Box-Muller, second value cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // normal truncated to +/- 2 sigma, scaled by stddev
    double truncated_normal(double stddev) {
        double z = normal();
        while (z < -2.0 || z > 2.0) z = normal();
        return z * stddev;
    }

    template <typename T>
    void fill_normal(T* dst, size_t n, double stddev = 1.0) {
        for (size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(normal() * stddev);
    }

    template <typename T>
    void fill_truncated_normal(T* dst, size_t n, double stddev) {
        for (size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(truncated_normal(stddev));
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace decgan
