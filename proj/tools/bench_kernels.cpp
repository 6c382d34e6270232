// Times the OpenMP kernels against the serial reference implementations and
// checks that both produce bitwise-identical results.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include <omp.h>

#include "perceptlab/core/resample.hpp"
#include "perceptlab/core/rng.hpp"
#include "perceptlab/nn/kernels.hpp"

using namespace perceptlab;

namespace {

Tensor random_tensor(const std::vector<int>& shape, uint64_t seed) {
    Tensor t = Tensor::zeros(shape);
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double vec_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double best_of(const std::function<void()>& f, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const double t0 = omp_get_wtime();
        f();
        best = std::min(best, omp_get_wtime() - t0);
    }
    return best;
}

struct Case {
    std::string name;
    std::function<void()> serial_fn, par_fn;
    std::function<double()> diff;
};

} // namespace

int main(int argc, char** argv) {
    int reps = 5;
    if (argc > 1) reps = std::max(1, std::atoi(argv[1]));

    const Tensor x = random_tensor({16, 128, 128}, 1);
    const Tensor w = random_tensor({32, 16, 3, 3}, 2);
    const Tensor b = random_tensor({32}, 3);
    const Tensor gy = random_tensor({32, 128, 128}, 4);
    Tensor y_s({32, 128, 128}), y_p({32, 128, 128});
    Tensor gx_s({16, 128, 128}), gx_p({16, 128, 128});
    Tensor gw_s({32, 16, 3, 3}), gw_p({32, 16, 3, 3});
    Tensor gb_s({32}), gb_p({32});

    const Tensor stage = random_tensor({64, 128, 128}, 5);
    const Tensor stage_b = random_tensor({64, 128, 128}, 6);
    std::vector<double> m_s(64), v_s(64), m_p(64), v_p(64);
    std::vector<double> mx_s(64), my_s(64), vx_s(64), vy_s(64), c_s(64);
    std::vector<double> mx_p(64), my_p(64), vx_p(64), vy_p(64), c_p(64);

    const Tensor img = random_tensor({3, 512, 512}, 7);
    const kernels::TapTable up = bicubic_taps(512, 1024);
    const kernels::TapTable down = bicubic_taps(512, 128);
    Tensor up_s({3, 512, 1024}), up_p({3, 512, 1024});
    Tensor down_s({3, 512, 128}), down_p({3, 512, 128});

    std::vector<Case> cases;
    cases.push_back(
        {"conv2d_forward (16,128,128)->(32,.)",
         [&] { kernels::serial::conv2d_forward(x, w, b, 1, 1, y_s); },
         [&] { kernels::par::conv2d_forward(x, w, b, 1, 1, y_p); },
         [&] { return max_abs_diff(y_s, y_p); }});
    cases.push_back({"conv2d_backward_input",
                     [&] {
                         gx_s.fill(0.0);
                         kernels::serial::conv2d_backward_input(gy, w, 1, 1, gx_s);
                     },
                     [&] {
                         gx_p.fill(0.0);
                         kernels::par::conv2d_backward_input(gy, w, 1, 1, gx_p);
                     },
                     [&] { return max_abs_diff(gx_s, gx_p); }});
    cases.push_back({"conv2d_backward_params",
                     [&] {
                         gw_s.fill(0.0);
                         gb_s.fill(0.0);
                         kernels::serial::conv2d_backward_params(gy, x, 1, 1, gw_s,
                                                                 gb_s);
                     },
                     [&] {
                         gw_p.fill(0.0);
                         gb_p.fill(0.0);
                         kernels::par::conv2d_backward_params(gy, x, 1, 1, gw_p, gb_p);
                     },
                     [&] { return std::max(max_abs_diff(gw_s, gw_p),
                                           max_abs_diff(gb_s, gb_p)); }});
    cases.push_back(
        {"stage_moments (64,128,128)",
         [&] { kernels::serial::stage_moments(stage, m_s.data(), v_s.data()); },
         [&] { kernels::par::stage_moments(stage, m_p.data(), v_p.data()); },
         [&] { return std::max(vec_diff(m_s, m_p), vec_diff(v_s, v_p)); }});
    cases.push_back({"stage_pair_stats (64,128,128)",
                     [&] {
                         kernels::serial::stage_pair_stats(stage, stage_b, mx_s.data(),
                                                           my_s.data(), vx_s.data(),
                                                           vy_s.data(), c_s.data());
                     },
                     [&] {
                         kernels::par::stage_pair_stats(stage, stage_b, mx_p.data(),
                                                        my_p.data(), vx_p.data(),
                                                        vy_p.data(), c_p.data());
                     },
                     [&] {
                         double m = vec_diff(mx_s, mx_p);
                         m = std::max(m, vec_diff(my_s, my_p));
                         m = std::max(m, vec_diff(vx_s, vx_p));
                         m = std::max(m, vec_diff(vy_s, vy_p));
                         return std::max(m, vec_diff(c_s, c_p));
                     }});
    cases.push_back({"resample_width 512->1024",
                     [&] { kernels::serial::resample_width(img, up, up_s); },
                     [&] { kernels::par::resample_width(img, up, up_p); },
                     [&] { return max_abs_diff(up_s, up_p); }});
    cases.push_back({"resample_width 512->128 (antialias)",
                     [&] { kernels::serial::resample_width(img, down, down_s); },
                     [&] { kernels::par::resample_width(img, down, down_p); },
                     [&] { return max_abs_diff(down_s, down_p); }});

    std::printf("threads=%d reps=%d (best-of timing)\n", omp_get_max_threads(), reps);
    std::printf("%-36s %12s %12s %9s %12s\n", "kernel", "serial_ms", "parallel_ms",
                "speedup", "max_abs_diff");
    bool identical = true;
    for (auto& c : cases) {
        const double ts = best_of(c.serial_fn, reps);
        const double tp = best_of(c.par_fn, reps);
        const double d = c.diff();
        identical = identical && d == 0.0;
        std::printf("%-36s %12.3f %12.3f %8.2fx %12g\n", c.name.c_str(), ts * 1e3,
                    tp * 1e3, ts / tp, d);
    }
    if (!identical) {
        std::printf("FAIL: parallel kernels are not bitwise identical to serial\n");
        return 1;
    }
    std::printf("all parallel kernels bitwise identical to serial\n");
    return 0;
}
