#pragma once

#include "perceptlab/core/types.hpp"
#include "perceptlab/nn/kernels.hpp"

namespace perceptlab {

// Cubic convolution kernel, a = -0.5, edge replication. Downscaling widens
// the kernel by the scale factor (the usual SR data-pipeline convention);
// upscaling uses the plain 4-tap kernel. Weights are renormalized per output
// sample so constants survive edges exactly.
kernels::TapTable bicubic_taps(int in_size, int out_size);

// general separable resize of a (C,H,W) tensor; no range clamping
Tensor bicubic_resize(const Tensor& chw, int out_h, int out_w);

// integer-factor downsample of an image; dims must divide, output clamped to [0,1]
ImageTensor bicubic_downsample(const ImageTensor& img, int factor);

// integer-factor upsample of a raw tensor (used by the SR skip path)
Tensor bicubic_upsample(const Tensor& chw, int factor);

} // namespace perceptlab
