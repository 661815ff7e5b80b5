#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "nt/util.hpp"

namespace nt {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Seeded counter-based generator. All randomness in the repo flows from one
// root seed through named streams so components can be perturbed independently.
// Bit-generation avoids std distributions, whose output is not portable.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {
        // decorrelate trivially related seeds
        splitmix64(state_);
    }

    Rng(std::uint64_t root_seed, std::string_view stream)
        : Rng(derive(root_seed, stream)) {}

    // Child stream derived from this generator's identity, not its position.
    Rng split(std::string_view stream) const { return Rng(derive(seed_, stream)); }
    Rng split(std::uint64_t salt) const {
        std::uint64_t s = seed_ ^ (salt * 0x9e3779b97f4a7c15ull);
        return Rng(splitmix64(s));
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Unbiased draw from [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<int>(x % un);
    }

    // k distinct values from [0, n), in draw order.
    std::vector<int> sample_without_replacement(int n, int k) {
        if (k < 0 || k > n)
            throw std::invalid_argument("Rng::sample_without_replacement: k out of range");
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
            int j = i + uniform_int(n - i);
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
            out.push_back(pool[static_cast<std::size_t>(i)]);
        }
        return out;
    }

    std::uint64_t seed() const { return seed_; }

  private:
    static std::uint64_t derive(std::uint64_t root, std::string_view stream) {
        std::uint64_t h = fnv1a64(&root, sizeof(root));
        h = fnv1a64(stream, h);
        return splitmix64(h);
    }

    std::uint64_t seed_;
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace nt
