#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace blockdiff {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (grammar, block size, ratios, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Tensor shape / dimension mismatch.
struct DimError : Error {
    using Error::Error;
};

// Malformed input file; message carries the line number.
struct ParseError : Error {
    using Error::Error;
};

// Position / index outside the permitted range.
struct RangeError : Error {
    using Error::Error;
};

// Structurally invalid attention layout (e.g. an all-false row).
struct LayoutError : Error {
    using Error::Error;
};

// Mean requested over an empty selection.
struct UndefinedMeanError : Error {
    using Error::Error;
};

// Value outside the mathematical domain (negative probabilities, ...).
struct DomainError : Error {
    using Error::Error;
};

// Conditioning on zero-probability evidence.
struct ConditioningError : Error {
    using Error::Error;
};

// Non-finite gradients or otherwise broken optimization state.
struct TrainError : Error {
    using Error::Error;
};

// A pipeline stage was invoked before its prerequisite artifact exists.
struct DependencyError : Error {
    using Error::Error;
};

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from (base, stream) so that record i's
// randomness does not depend on iteration order.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    uint64_t s = base ^ (0xA0761D6478BD642FULL * (stream + 1));
    splitmix64(s);
    return splitmix64(s);
}

// Deterministic RNG. All distributions are hand-rolled on top of splitmix64
// so results are identical across standard libraries and platforms.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in (0, 1]
    double next_double_open_low() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // uniform integer in [0, n), unbiased via rejection
    uint64_t next_below(uint64_t n) {
        if (n == 0) throw RangeError("Rng::next_below: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    bool next_bernoulli(double p) { return next_double() < p; }

    // standard normal via Box-Muller
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = next_double_open_low();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), returned sorted
    std::vector<int> sample_indices(int n, int k) {
        if (k > n) throw RangeError("Rng::sample_indices: k > n");
        std::vector<int> all(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
        shuffle(all);
        all.resize(static_cast<size_t>(k));
        std::sort(all.begin(), all.end());
        return all;
    }

  private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace blockdiff
