#pragma once

// shared fixtures: deterministic random images, toy PNG corpora, temp dirs

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "perceptlab/core/image_io.hpp"
#include "perceptlab/core/rng.hpp"
#include "perceptlab/core/types.hpp"

namespace testutil {

using perceptlab::ImageTensor;
using perceptlab::Rng;
using perceptlab::Tensor;

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i] || std::signbit(a[i]) != std::signbit(b[i])) return false;
    return true;
}

inline Tensor random_tensor(const std::vector<int>& shape, uint64_t seed) {
    Tensor t(shape);
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    return t;
}

inline ImageTensor random_image(int c, int h, int w, uint64_t seed) {
    return ImageTensor(random_tensor({c, h, w}, seed));
}

// 8-bit representable (exact PNG round-trip)
inline ImageTensor quantized_image(int c, int h, int w, uint64_t seed) {
    Tensor t({c, h, w});
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<double>(rng.uniform_int(256)) / 255.0;
    return ImageTensor(t);
}

// smooth content so derived scores vary by item instead of averaging out
inline ImageTensor wave_image(int c, int h, int w, double phase) {
    Tensor t({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                t.at(ch, y, x) =
                    0.5 + 0.45 * std::sin(phase + 0.7 * ch + 0.31 * y + 0.17 * x);
    return ImageTensor(t);
}

struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("perceptlab_test_" + tag + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

// n PNGs named c<k>_d<j>.png (k = content group, j = variant within it)
inline std::vector<std::filesystem::path> write_toy_pngs(
    const std::filesystem::path& dir, int n, int variants_per_content, int c, int h,
    int w, uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (int i = 0; i < n; ++i) {
        const int content = i / variants_per_content;
        const int variant = i % variants_per_content;
        auto p = dir / ("c" + std::to_string(content) + "_d" +
                        std::to_string(variant) + ".png");
        perceptlab::write_png(p, quantized_image(c, h, w, seed + i));
        paths.push_back(p);
    }
    return paths;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::string s((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());
    return s;
}

} // namespace testutil
