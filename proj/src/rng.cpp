#include "decode/rng.hpp"

#include <cmath>

namespace decode {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

RandomStream::RandomStream(uint64_t state) : state_(state) {}

uint64_t RandomStream::next_u64() { return splitmix64(state_); }

double RandomStream::uniform() {
    // 53 mantissa bits -> [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RandomStream::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = kTwoPi * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
}

int64_t RandomStream::uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // rejection-free modulo is fine here; span is tiny vs 2^64
    return lo + static_cast<int64_t>(next_u64() % span);
}

std::vector<double> RandomStream::normal_vec(size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal();
    return v;
}

uint64_t derive_seed(uint64_t root, std::string_view name, uint64_t a,
                     uint64_t b, uint64_t c) {
    uint64_t x = root ^ 0x6a09e667f3bcc908ULL;
    x ^= fnv1a(name);
    splitmix64(x);
    x ^= a * 0x9e3779b97f4a7c15ULL + 1;
    splitmix64(x);
    x ^= b * 0xc2b2ae3d27d4eb4fULL + 2;
    splitmix64(x);
    x ^= c * 0x165667b19e3779f9ULL + 3;
    uint64_t s = x;
    return splitmix64(s);
}

RandomStream make_stream(uint64_t root, std::string_view name, uint64_t a,
                         uint64_t b, uint64_t c) {
    return RandomStream(derive_seed(root, name, a, b, c));
}

}  // namespace decode
