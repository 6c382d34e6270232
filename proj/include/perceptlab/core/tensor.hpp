#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "perceptlab/core/errors.hpp"

namespace perceptlab {

// Dense row-major double tensor. Images are (C,H,W), conv kernels
// (Cout,Cin,K,K), vectors (N). All numerics run in double; file
// containers store float32 (see nn/weights.hpp).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data);

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // (c,h,w) access for 3-d tensors
    double& at(int c, int y, int x) {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double at(int c, int y, int x) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    void fill(double v);
    bool all_finite() const;
    double min() const;
    double max() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int>& shape);

} // namespace perceptlab
