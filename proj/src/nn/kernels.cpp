#include "perceptlab/nn/kernels.hpp"

#include <cstdlib>

namespace perceptlab::kernels {

Conv2dDims conv2d_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.ndim() != 3) throw DimensionError("conv2d input must be (C,H,W)");
    if (w.ndim() != 4) throw DimensionError("conv2d weight must be (Cout,Cin,K,K)");
    if (w.dim(2) != w.dim(3)) throw DimensionError("conv2d kernel must be square");
    if (x.dim(0) != w.dim(1))
        throw DimensionError("conv2d channel mismatch: input " + x.shape_str() +
                             " vs weight " + w.shape_str());
    Conv2dDims d;
    d.cin = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.cout = w.dim(0);
    d.k = w.dim(2);
    d.stride = stride;
    d.pad = pad;
    d.oh = (d.h + 2 * pad - d.k) / stride + 1;
    d.ow = (d.w + 2 * pad - d.k) / stride + 1;
    if (d.oh <= 0 || d.ow <= 0)
        throw DimensionError("conv2d input " + x.shape_str() + " too small for kernel");
    return d;
}

namespace {

inline void conv_forward_one(const Conv2dDims& d, const double* x, const double* w,
                             const double* b, double* y, int co, int oy) {
    const int ksz = d.k;
    for (int ox = 0; ox < d.ow; ++ox) {
        double acc = b ? b[co] : 0.0;
        const int iy0 = oy * d.stride - d.pad;
        const int ix0 = ox * d.stride - d.pad;
        for (int ci = 0; ci < d.cin; ++ci) {
            const double* xc = x + static_cast<size_t>(ci) * d.h * d.w;
            const double* wc = w + (static_cast<size_t>(co) * d.cin + ci) * ksz * ksz;
            for (int ky = 0; ky < ksz; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= d.h) continue;
                for (int kx = 0; kx < ksz; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= d.w) continue;
                    acc += xc[static_cast<size_t>(iy) * d.w + ix] * wc[ky * ksz + kx];
                }
            }
        }
        y[(static_cast<size_t>(co) * d.oh + oy) * d.ow + ox] = acc;
    }
}

inline void conv_backward_input_one(const Conv2dDims& d, const double* gy,
                                    const double* w, double* gx, int ci, int iy) {
    const int ksz = d.k;
    for (int ix = 0; ix < d.w; ++ix) {
        double acc = 0.0;
        for (int ky = 0; ky < ksz; ++ky) {
            const int ny = iy + d.pad - ky;
            if (ny < 0 || ny % d.stride != 0) continue;
            const int oy = ny / d.stride;
            if (oy >= d.oh) continue;
            for (int kx = 0; kx < ksz; ++kx) {
                const int nx = ix + d.pad - kx;
                if (nx < 0 || nx % d.stride != 0) continue;
                const int ox = nx / d.stride;
                if (ox >= d.ow) continue;
                for (int co = 0; co < d.cout; ++co) {
                    acc += gy[(static_cast<size_t>(co) * d.oh + oy) * d.ow + ox] *
                           w[((static_cast<size_t>(co) * d.cin + ci) * ksz + ky) * ksz + kx];
                }
            }
        }
        gx[(static_cast<size_t>(ci) * d.h + iy) * d.w + ix] += acc;
    }
}

inline void conv_backward_params_one(const Conv2dDims& d, const double* gy,
                                     const double* x, double* gw, double* gb, int co) {
    const int ksz = d.k;
    const double* gyc = gy + static_cast<size_t>(co) * d.oh * d.ow;
    double bacc = 0.0;
    for (int i = 0; i < d.oh * d.ow; ++i) bacc += gyc[i];
    gb[co] += bacc;
    for (int ci = 0; ci < d.cin; ++ci) {
        const double* xc = x + static_cast<size_t>(ci) * d.h * d.w;
        double* gwc = gw + (static_cast<size_t>(co) * d.cin + ci) * ksz * ksz;
        for (int ky = 0; ky < ksz; ++ky) {
            for (int kx = 0; kx < ksz; ++kx) {
                double acc = 0.0;
                for (int oy = 0; oy < d.oh; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        if (ix < 0 || ix >= d.w) continue;
                        acc += gyc[static_cast<size_t>(oy) * d.ow + ox] *
                               xc[static_cast<size_t>(iy) * d.w + ix];
                    }
                }
                gwc[ky * ksz + kx] += acc;
            }
        }
    }
}

inline void moments_one(const double* c, int64_t n, double& mean, double& var) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += c[i];
    const double mu = s / static_cast<double>(n);
    double v = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double dc = c[i] - mu;
        v += dc * dc;
    }
    mean = mu;
    var = v / static_cast<double>(n);
}

inline void pair_stats_one(const double* xs, const double* ys, int64_t n, double& mx,
                           double& my, double& vx, double& vy, double& cov) {
    double sx = 0.0, sy = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
    }
    mx = sx / static_cast<double>(n);
    my = sy / static_cast<double>(n);
    double ax = 0.0, ay = 0.0, axy = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        ax += dx * dx;
        ay += dy * dy;
        axy += dx * dy;
    }
    vx = ax / static_cast<double>(n);
    vy = ay / static_cast<double>(n);
    cov = axy / static_cast<double>(n);
}

inline void resample_width_row(const Tensor& in, const TapTable& taps, Tensor& out,
                               int c, int y) {
    const int iw = in.dim(2);
    const int ow = taps.out_size;
    const double* row = in.data() + (static_cast<size_t>(c) * in.dim(1) + y) * iw;
    double* orow = out.data() + (static_cast<size_t>(c) * out.dim(1) + y) * ow;
    for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        const int base = ox * taps.ntaps;
        for (int t = 0; t < taps.ntaps; ++t)
            acc += row[taps.index[base + t]] * taps.weight[base + t];
        orow[ox] = acc;
    }
}

inline void resample_height_row(const Tensor& in, const TapTable& taps, Tensor& out,
                                int c, int oy) {
    const int w = in.dim(2);
    const int ih = in.dim(1);
    const double* plane = in.data() + static_cast<size_t>(c) * ih * w;
    double* orow = out.data() + (static_cast<size_t>(c) * taps.out_size + oy) * w;
    const int base = oy * taps.ntaps;
    for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = 0; t < taps.ntaps; ++t)
            acc += plane[static_cast<size_t>(taps.index[base + t]) * w + x] *
                   taps.weight[base + t];
        orow[x] = acc;
    }
}

} // namespace

namespace serial {

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                    int pad, Tensor& y) {
    const Conv2dDims d = conv2d_dims(x, w, stride, pad);
    for (int co = 0; co < d.cout; ++co)
        for (int oy = 0; oy < d.oh; ++oy)
            conv_forward_one(d, x.data(), w.data(), b.empty() ? nullptr : b.data(),
                             y.data(), co, oy);
}

void conv2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad,
                           Tensor& gx) {
    const Conv2dDims d = conv2d_dims(gx, w, stride, pad);
    for (int ci = 0; ci < d.cin; ++ci)
        for (int iy = 0; iy < d.h; ++iy)
            conv_backward_input_one(d, gy.data(), w.data(), gx.data(), ci, iy);
}

void conv2d_backward_params(const Tensor& gy, const Tensor& x, int stride, int pad,
                            Tensor& gw, Tensor& gb) {
    const Conv2dDims d = conv2d_dims(x, gw, stride, pad);
    for (int co = 0; co < d.cout; ++co)
        conv_backward_params_one(d, gy.data(), x.data(), gw.data(), gb.data(), co);
}

void stage_moments(const Tensor& stage, double* means, double* vars) {
    const int c = stage.dim(0);
    const int64_t n = static_cast<int64_t>(stage.dim(1)) * stage.dim(2);
    for (int j = 0; j < c; ++j)
        moments_one(stage.data() + static_cast<size_t>(j) * n, n, means[j], vars[j]);
}

void stage_pair_stats(const Tensor& x, const Tensor& y, double* mean_x, double* mean_y,
                      double* var_x, double* var_y, double* cov_xy) {
    const int c = x.dim(0);
    const int64_t n = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    for (int j = 0; j < c; ++j)
        pair_stats_one(x.data() + static_cast<size_t>(j) * n,
                       y.data() + static_cast<size_t>(j) * n, n, mean_x[j], mean_y[j],
                       var_x[j], var_y[j], cov_xy[j]);
}

void resample_width(const Tensor& in, const TapTable& taps, Tensor& out) {
    for (int c = 0; c < in.dim(0); ++c)
        for (int y = 0; y < in.dim(1); ++y) resample_width_row(in, taps, out, c, y);
}

void resample_height(const Tensor& in, const TapTable& taps, Tensor& out) {
    for (int c = 0; c < in.dim(0); ++c)
        for (int oy = 0; oy < taps.out_size; ++oy)
            resample_height_row(in, taps, out, c, oy);
}

} // namespace serial

namespace par {

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                    int pad, Tensor& y) {
    const Conv2dDims d = conv2d_dims(x, w, stride, pad);
    const double* bp = b.empty() ? nullptr : b.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < d.cout; ++co)
        for (int oy = 0; oy < d.oh; ++oy)
            conv_forward_one(d, x.data(), w.data(), bp, y.data(), co, oy);
}

void conv2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad,
                           Tensor& gx) {
    const Conv2dDims d = conv2d_dims(gx, w, stride, pad);
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < d.cin; ++ci)
        for (int iy = 0; iy < d.h; ++iy)
            conv_backward_input_one(d, gy.data(), w.data(), gx.data(), ci, iy);
}

void conv2d_backward_params(const Tensor& gy, const Tensor& x, int stride, int pad,
                            Tensor& gw, Tensor& gb) {
    const Conv2dDims d = conv2d_dims(x, gw, stride, pad);
#pragma omp parallel for schedule(static)
    for (int co = 0; co < d.cout; ++co)
        conv_backward_params_one(d, gy.data(), x.data(), gw.data(), gb.data(), co);
}

void stage_moments(const Tensor& stage, double* means, double* vars) {
    const int c = stage.dim(0);
    const int64_t n = static_cast<int64_t>(stage.dim(1)) * stage.dim(2);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < c; ++j)
        moments_one(stage.data() + static_cast<size_t>(j) * n, n, means[j], vars[j]);
}

void stage_pair_stats(const Tensor& x, const Tensor& y, double* mean_x, double* mean_y,
                      double* var_x, double* var_y, double* cov_xy) {
    const int c = x.dim(0);
    const int64_t n = static_cast<int64_t>(x.dim(1)) * x.dim(2);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < c; ++j)
        pair_stats_one(x.data() + static_cast<size_t>(j) * n,
                       y.data() + static_cast<size_t>(j) * n, n, mean_x[j], mean_y[j],
                       var_x[j], var_y[j], cov_xy[j]);
}

void resample_width(const Tensor& in, const TapTable& taps, Tensor& out) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < in.dim(0); ++c)
        for (int y = 0; y < in.dim(1); ++y) resample_width_row(in, taps, out, c, y);
}

void resample_height(const Tensor& in, const TapTable& taps, Tensor& out) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < in.dim(0); ++c)
        for (int oy = 0; oy < taps.out_size; ++oy)
            resample_height_row(in, taps, out, c, oy);
}

} // namespace par

namespace {

bool parallel_default() {
    const char* env = std::getenv("PERCEPTLAB_SERIAL");
    return !(env && env[0] == '1');
}

bool g_parallel = parallel_default();

} // namespace

bool parallel_enabled() { return g_parallel; }
void set_parallel_enabled(bool on) { g_parallel = on; }

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                    int pad, Tensor& y) {
    g_parallel ? par::conv2d_forward(x, w, b, stride, pad, y)
               : serial::conv2d_forward(x, w, b, stride, pad, y);
}

void conv2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad,
                           Tensor& gx) {
    g_parallel ? par::conv2d_backward_input(gy, w, stride, pad, gx)
               : serial::conv2d_backward_input(gy, w, stride, pad, gx);
}

void conv2d_backward_params(const Tensor& gy, const Tensor& x, int stride, int pad,
                            Tensor& gw, Tensor& gb) {
    g_parallel ? par::conv2d_backward_params(gy, x, stride, pad, gw, gb)
               : serial::conv2d_backward_params(gy, x, stride, pad, gw, gb);
}

void stage_moments(const Tensor& stage, double* means, double* vars) {
    g_parallel ? par::stage_moments(stage, means, vars)
               : serial::stage_moments(stage, means, vars);
}

void stage_pair_stats(const Tensor& x, const Tensor& y, double* mean_x, double* mean_y,
                      double* var_x, double* var_y, double* cov_xy) {
    g_parallel ? par::stage_pair_stats(x, y, mean_x, mean_y, var_x, var_y, cov_xy)
               : serial::stage_pair_stats(x, y, mean_x, mean_y, var_x, var_y, cov_xy);
}

void resample_width(const Tensor& in, const TapTable& taps, Tensor& out) {
    g_parallel ? par::resample_width(in, taps, out)
               : serial::resample_width(in, taps, out);
}

void resample_height(const Tensor& in, const TapTable& taps, Tensor& out) {
    g_parallel ? par::resample_height(in, taps, out)
               : serial::resample_height(in, taps, out);
}

} // namespace perceptlab::kernels
