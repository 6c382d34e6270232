#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "perceptlab/core/tensor.hpp"

namespace perceptlab::nn {

// Define-by-run reverse-mode autodiff. Each op returns a node holding its
// value and a backward closure; backward() walks the graph in reverse
// topological order. Parameters are persistent leaf nodes whose grads the
// optimizers consume. Graphs are rebuilt every step and freed when the root
// goes out of scope.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad; // allocated lazily, same shape as value
    bool requires_grad = false;
    bool needs_grad = false; // requires_grad or any input needs it
    std::vector<Var> inputs;
    std::function<void(Node&)> backward_fn;
    std::string name;

    Tensor& ensure_grad();
};

Var constant(Tensor v);
Var parameter(Tensor v, std::string name);

// seeds root grad with 1 (root must be scalar) and propagates
void backward(const Var& root);

// elementwise / structural ops
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);
Var neg(const Var& a);
Var relu(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
// log(max(x, floor)); zero gradient on the clamped branch
Var log_clamped(const Var& a, double floor);
Var mean_all(const Var& a);                       // -> scalar
Var mean_abs_diff(const Var& a, const Var& b);    // L1 loss -> scalar
Var stack_mean(const std::vector<Var>& xs);       // elementwise mean over nodes
Var weighted_sum(const std::vector<std::pair<double, Var>>& terms); // scalars

// network ops
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var pixel_shuffle(const Var& x, int upscale);     // (C*r^2,H,W) -> (C,H*r,W*r)
Var global_avg_pool(const Var& x);                // (C,H,W) -> (C)
Var dot_bias(const Var& x, const Var& w, const Var& b); // (C)x(C)+() -> scalar

// DISTS stage score: sum_j alpha[j]*l_j + beta[j]*s_j over the channels of an
// aligned feature-map pair (Eq. of texture/structure similarity applied
// per channel). alpha/beta are plain coefficient tensors, not graph nodes.
Var similarity_stage_score(const Var& x_stage, const Var& y_stage, const Tensor& alpha,
                           const Tensor& beta, double c1, double c2);

} // namespace perceptlab::nn
