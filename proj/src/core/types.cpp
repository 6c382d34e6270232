#include "perceptlab/core/types.hpp"

#include <algorithm>

namespace perceptlab {

ImageTensor::ImageTensor(Tensor chw) : data_(std::move(chw)) {
    if (data_.ndim() != 3)
        throw DimensionError("image tensor must be (channels,height,width), got " +
                             data_.shape_str());
    int c = data_.dim(0);
    if (c != 1 && c != 3)
        throw DomainError("image channels must be 1 or 3, got " + std::to_string(c));
    if (data_.dim(1) <= 0 || data_.dim(2) <= 0)
        throw DimensionError("image must have positive height and width");
    if (!data_.all_finite())
        throw DomainError("image contains non-finite values");
    if (data_.min() < 0.0 || data_.max() > 1.0)
        throw DomainError("image values must lie in [0,1]");
}

ImageTensor ImageTensor::from_tensor_clamped(Tensor chw) {
    for (double& v : chw.vec()) v = std::clamp(v, 0.0, 1.0);
    return ImageTensor(std::move(chw));
}

PairedSample::PairedSample(ImageTensor gen, ImageTensor ref)
    : generated(std::move(gen)), reference(std::move(ref)) {
    if (!generated.tensor().same_shape(reference.tensor()))
        throw DimensionError("paired sample images must have identical shapes: " +
                             generated.tensor().shape_str() + " vs " +
                             reference.tensor().shape_str());
}

} // namespace perceptlab
