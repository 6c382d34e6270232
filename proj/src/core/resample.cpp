#include "perceptlab/core/resample.hpp"

#include <algorithm>
#include <cmath>

namespace perceptlab {

namespace {

// Keys cubic with a = -0.5
double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::fabs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
    return 0.0;
}

} // namespace

kernels::TapTable bicubic_taps(int in_size, int out_size) {
    if (in_size <= 0 || out_size <= 0)
        throw DimensionError("resample sizes must be positive");
    const double scale = static_cast<double>(in_size) / out_size;
    const double support_scale = std::max(scale, 1.0); // widen only when shrinking
    const int ntaps = static_cast<int>(std::ceil(4.0 * support_scale));

    kernels::TapTable taps;
    taps.out_size = out_size;
    taps.ntaps = ntaps;
    taps.index.resize(static_cast<size_t>(out_size) * ntaps);
    taps.weight.resize(static_cast<size_t>(out_size) * ntaps);

    for (int o = 0; o < out_size; ++o) {
        const double center = (o + 0.5) * scale - 0.5;
        const int start = static_cast<int>(std::floor(center - 2.0 * support_scale)) + 1;
        double sum = 0.0;
        const int base = o * ntaps;
        for (int t = 0; t < ntaps; ++t) {
            const int i = start + t;
            const double w = cubic_kernel((center - i) / support_scale);
            taps.index[base + t] = std::clamp(i, 0, in_size - 1);
            taps.weight[base + t] = w;
            sum += w;
        }
        for (int t = 0; t < ntaps; ++t) taps.weight[base + t] /= sum;
    }
    return taps;
}

Tensor bicubic_resize(const Tensor& chw, int out_h, int out_w) {
    if (chw.ndim() != 3) throw DimensionError("bicubic_resize expects (C,H,W)");
    const int c = chw.dim(0);
    const int h = chw.dim(1);
    const int w = chw.dim(2);

    const kernels::TapTable wtaps = bicubic_taps(w, out_w);
    Tensor mid({c, h, out_w});
    kernels::resample_width(chw, wtaps, mid);

    const kernels::TapTable htaps = bicubic_taps(h, out_h);
    Tensor out({c, out_h, out_w});
    kernels::resample_height(mid, htaps, out);
    return out;
}

ImageTensor bicubic_downsample(const ImageTensor& img, int factor) {
    if (factor <= 0) throw DomainError("downsample factor must be positive");
    const int h = img.height();
    const int w = img.width();
    if (h % factor != 0 || w % factor != 0)
        throw DimensionError("image " + img.tensor().shape_str() +
                             " not divisible by factor " + std::to_string(factor));
    Tensor out = bicubic_resize(img.tensor(), h / factor, w / factor);
    return ImageTensor::from_tensor_clamped(std::move(out));
}

Tensor bicubic_upsample(const Tensor& chw, int factor) {
    if (factor <= 0) throw DomainError("upsample factor must be positive");
    if (factor == 1) return chw;
    return bicubic_resize(chw, chw.dim(1) * factor, chw.dim(2) * factor);
}

} // namespace perceptlab
