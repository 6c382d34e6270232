#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace perceptlab {

// Every stochastic operation derives its stream from the single experiment
// seed via a named substream, so components replay identically in isolation.
uint64_t derive_seed(uint64_t root_seed, std::string_view stream_name);

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
// sequences are bit-identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0,1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal, polar Box-Muller without caching (stateless per call
    // pair, deterministic)
    double normal();

    // normal(0, std) rejected outside +/- 2 std
    double truncated_normal(double stddev);

    int uniform_int(int n); // [0, n)

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace perceptlab
