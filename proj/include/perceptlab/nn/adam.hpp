#pragma once

#include "perceptlab/nn/graph.hpp"
#include "perceptlab/nn/weights.hpp"

namespace perceptlab::nn {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction over a fixed parameter list. Missing grads count
// as zero. State round-trips through WeightFile keyed by parameter name, so
// parameters handed in must be uniquely named.
class Adam {
public:
    explicit Adam(std::vector<Var> params, AdamConfig cfg = {});

    void step(double lr);
    void zero_grad();
    int64_t t() const { return t_; }
    const std::vector<Var>& params() const { return params_; }

    void save_state(WeightFile& wf, const std::string& prefix) const;
    void load_state(const WeightFile& wf, const std::string& prefix);
    void snap_f32(); // round moment buffers through float32 (checkpoint parity)

private:
    std::vector<Var> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

} // namespace perceptlab::nn
