#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace decode {

// Deterministic stream derivation: every random draw in the toolkit comes
// from a RandomStream derived from (root seed, stream name, indices).
// Gaussian variates use an explicit Box-Muller so sequences are identical
// across platforms and standard libraries.
class RandomStream {
public:
    explicit RandomStream(uint64_t state);

    uint64_t next_u64();
    // uniform in [0, 1)
    double uniform();
    double uniform(double lo, double hi);
    // standard normal via Box-Muller (pair-cached)
    double normal();
    // integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi);

    std::vector<double> normal_vec(size_t n);

private:
    uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// Derive a child seed from a root seed, a stream name, and up to three
// integer indices. Stable across builds; never reuses the root directly.
uint64_t derive_seed(uint64_t root, std::string_view name, uint64_t a = 0,
                     uint64_t b = 0, uint64_t c = 0);

RandomStream make_stream(uint64_t root, std::string_view name, uint64_t a = 0,
                         uint64_t b = 0, uint64_t c = 0);

}  // namespace decode
