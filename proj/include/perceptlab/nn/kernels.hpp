#pragma once

#include <cstdint>
#include <vector>

#include "perceptlab/core/tensor.hpp"

namespace perceptlab::kernels {

// Runtime switch between the OpenMP kernels and the serial reference
// implementations. Parallel is the default; PERCEPTLAB_SERIAL=1 or
// set_parallel_enabled(false) selects serial. Both paths split work only
// across independent output elements and keep each element's accumulation
// order fixed, so results are bitwise identical.
bool parallel_enabled();
void set_parallel_enabled(bool on);

// Precomputed separable-resampling taps: for output index o, taps
// index[o*ntaps + t] with weights weight[o*ntaps + t]. Indices are already
// clamped into range (edge replication).
struct TapTable {
    int out_size = 0;
    int ntaps = 0;
    std::vector<int> index;
    std::vector<double> weight;
};

// x: (Cin,H,W), w: (Cout,Cin,K,K), b: (Cout), zero padding.
// y must be preshaped to (Cout,OH,OW).
struct Conv2dDims {
    int cin, h, w;
    int cout, k;
    int stride, pad;
    int oh, ow;
};

Conv2dDims conv2d_dims(const Tensor& x, const Tensor& w, int stride, int pad);

namespace serial {
void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                    int pad, Tensor& y);
// backward kernels accumulate (+=) into preallocated grads
void conv2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad,
                           Tensor& gx);
void conv2d_backward_params(const Tensor& gy, const Tensor& x, int stride, int pad,
                            Tensor& gw, Tensor& gb);
// per-channel population moments of a (C,H,W) stage
void stage_moments(const Tensor& stage, double* means, double* vars);
// fused per-channel stats of an aligned pair: means, variances, covariance
void stage_pair_stats(const Tensor& x, const Tensor& y, double* mean_x, double* mean_y,
                      double* var_x, double* var_y, double* cov_xy);
// separable resampling along the last (width) or middle (height) axis of (C,H,W)
void resample_width(const Tensor& in, const TapTable& taps, Tensor& out);
void resample_height(const Tensor& in, const TapTable& taps, Tensor& out);
} // namespace serial

namespace par {
void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                    int pad, Tensor& y);
void conv2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad,
                           Tensor& gx);
void conv2d_backward_params(const Tensor& gy, const Tensor& x, int stride, int pad,
                            Tensor& gw, Tensor& gb);
void stage_moments(const Tensor& stage, double* means, double* vars);
void stage_pair_stats(const Tensor& x, const Tensor& y, double* mean_x, double* mean_y,
                      double* var_x, double* var_y, double* cov_xy);
void resample_width(const Tensor& in, const TapTable& taps, Tensor& out);
void resample_height(const Tensor& in, const TapTable& taps, Tensor& out);
} // namespace par

// dispatchers honoring parallel_enabled()
void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                    int pad, Tensor& y);
void conv2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad,
                           Tensor& gx);
void conv2d_backward_params(const Tensor& gy, const Tensor& x, int stride, int pad,
                            Tensor& gw, Tensor& gb);
void stage_moments(const Tensor& stage, double* means, double* vars);
void stage_pair_stats(const Tensor& x, const Tensor& y, double* mean_x, double* mean_y,
                      double* var_x, double* var_y, double* cov_xy);
void resample_width(const Tensor& in, const TapTable& taps, Tensor& out);
void resample_height(const Tensor& in, const TapTable& taps, Tensor& out);

} // namespace perceptlab::kernels
