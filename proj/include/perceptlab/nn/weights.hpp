#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "perceptlab/core/tensor.hpp"

namespace perceptlab::nn {

// Named-tensor container backing every checkpoint ("PLWT" files). Payloads
// are float32 little-endian; math elsewhere runs in double, so put() rounds
// through f32. Rounding the live tensors the same way at save time (f32_snap)
// makes a continued run and a save/load-resumed run bitwise identical.
class WeightFile {
public:
    struct Entry {
        std::vector<int> shape;
        std::vector<float> data;
    };

    void put(const std::string& name, const Tensor& t);
    void put_scalar(const std::string& name, double v);
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor get(const std::string& name) const;
    double get_scalar(const std::string& name) const;
    std::vector<std::string> names() const; // sorted
    size_t size() const { return entries_.size(); }

    // FNV-1a 64 over names, shapes, and f32 payload bytes in name order
    uint64_t content_hash() const;

    // entries under "prefix" with the prefix removed; empty result is an error
    WeightFile with_prefix_stripped(const std::string& prefix) const;

    void save(const std::string& path) const;
    static WeightFile load(const std::string& path);

private:
    std::map<std::string, Entry> entries_;
};

// round a double through float32
inline double f32_round(double v) { return static_cast<double>(static_cast<float>(v)); }
void f32_snap(Tensor& t);

} // namespace perceptlab::nn
