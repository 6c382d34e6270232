#pragma once

#include <utility>

#include "perceptlab/core/tensor.hpp"

namespace perceptlab {

// Population moments throughout (divide by count): the similarity identities
// l,s <= 1 hold exactly only with biased moments.

// mean and population variance of channel j of a (C,H,W) stage
std::pair<double, double> channel_stats(const Tensor& stage, int channel);

// population covariance of two same-shaped channels
double channel_cov(const Tensor& a, const Tensor& b);

} // namespace perceptlab
