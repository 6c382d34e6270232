#pragma once

#include <optional>
#include <string>
#include <vector>

#include "perceptlab/core/errors.hpp"
#include "perceptlab/core/tensor.hpp"

namespace perceptlab {

// H x W x C image stored channel-major in [0,1]. Backbones apply their own
// normalization internally; nothing outside this range ever enters a metric.
class ImageTensor {
public:
    explicit ImageTensor(Tensor chw);

    // clamps to [0,1] first; the constructor itself rejects out-of-range data
    static ImageTensor from_tensor_clamped(Tensor chw);

    const Tensor& tensor() const { return data_; }
    int channels() const { return data_.dim(0); }
    int height() const { return data_.dim(1); }
    int width() const { return data_.dim(2); }

private:
    Tensor data_;
};

struct PairedSample {
    ImageTensor generated;
    ImageTensor reference;

    PairedSample(ImageTensor gen, ImageTensor ref);
};

// Per-stage feature maps; stage 0 is always the raw input image.
struct FeaturePyramid {
    std::vector<Tensor> stages;

    int num_stages() const { return static_cast<int>(stages.size()); }
};

struct ScoreRecord {
    std::string item_id;
    double raw_score = 0.0;
    std::optional<double> mos;
};

struct RngSeed {
    uint64_t value = 0;
};

} // namespace perceptlab
