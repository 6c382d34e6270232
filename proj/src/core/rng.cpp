#include "perceptlab/core/rng.hpp"

#include <cmath>

namespace perceptlab {

namespace {

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace

uint64_t derive_seed(uint64_t root_seed, std::string_view stream_name) {
    return splitmix64(root_seed ^ fnv1a64(stream_name));
}

double Rng::normal() {
    // polar method; loops until a point lands inside the unit disc
    for (;;) {
        double u = 2.0 * uniform() - 1.0;
        double v = 2.0 * uniform() - 1.0;
        double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
}

double Rng::truncated_normal(double stddev) {
    for (;;) {
        double z = normal();
        if (std::fabs(z) <= 2.0) return z * stddev;
    }
}

int Rng::uniform_int(int n) {
    // rejection sampling keeps the draw unbiased for any n
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<int>(x % un);
}

} // namespace perceptlab
