#include "perceptlab/nn/schedule.hpp"

#include <cmath>

#include "perceptlab/core/errors.hpp"

namespace perceptlab::nn {

double lr_at(double initial_lr, const std::vector<int>& decay_steps, int iter) {
    int halvings = 0;
    for (int d : decay_steps)
        if (d <= iter) ++halvings;
    return initial_lr * std::pow(2.0, -halvings);
}

std::vector<int> decay_every(int total_iters, int every) {
    if (every <= 0) throw DomainError("decay interval must be positive");
    std::vector<int> out;
    for (int d = every; d < total_iters; d += every) out.push_back(d);
    return out;
}

std::vector<int> decay_at_fractions(int total_iters, const std::vector<double>& fractions) {
    std::vector<int> out;
    for (double f : fractions) {
        const int d = static_cast<int>(f * total_iters);
        if (d > 0 && d < total_iters) out.push_back(d);
    }
    return out;
}

} // namespace perceptlab::nn
