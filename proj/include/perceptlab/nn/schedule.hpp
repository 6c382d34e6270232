#pragma once

#include <vector>

namespace perceptlab::nn {

// lr(iter) = initial_lr * 2^-(number of decay steps d with d <= iter)
double lr_at(double initial_lr, const std::vector<int>& decay_steps, int iter);

// halving points at every multiple of `every` below total_iters
std::vector<int> decay_every(int total_iters, int every);

// halving points at fixed fractions of total_iters (rounded down)
std::vector<int> decay_at_fractions(int total_iters, const std::vector<double>& fractions);

} // namespace perceptlab::nn
