#include "perceptlab/core/stats.hpp"

namespace perceptlab {

namespace {

std::pair<double, double> moments(const double* p, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += p[i];
    const double mean = s / static_cast<double>(n);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = p[i] - mean;
        acc += d * d;
    }
    return {mean, acc / static_cast<double>(n)};
}

} // namespace

std::pair<double, double> channel_stats(const Tensor& stage, int channel) {
    if (stage.ndim() != 3) throw DimensionError("stage must be (C,H,W)");
    if (channel < 0 || channel >= stage.dim(0))
        throw DomainError("channel " + std::to_string(channel) + " out of range");
    const int64_t n = static_cast<int64_t>(stage.dim(1)) * stage.dim(2);
    if (n == 0) throw DomainError("empty channel");
    return moments(stage.data() + static_cast<size_t>(channel) * n, n);
}

double channel_cov(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("covariance requires same shapes, got " + a.shape_str() +
                             " vs " + b.shape_str());
    const int64_t n = a.numel();
    if (n == 0) throw DomainError("empty channel");
    double sa = 0.0, sb = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) {
        sa += pa[i];
        sb += pb[i];
    }
    const double ma = sa / static_cast<double>(n);
    const double mb = sb / static_cast<double>(n);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += (pa[i] - ma) * (pb[i] - mb);
    return acc / static_cast<double>(n);
}

} // namespace perceptlab
