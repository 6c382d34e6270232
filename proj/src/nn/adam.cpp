#include "perceptlab/nn/adam.hpp"

#include <cmath>
#include <unordered_set>

namespace perceptlab::nn {

Adam::Adam(std::vector<Var> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    std::unordered_set<std::string> names;
    for (const auto& p : params_) {
        if (!p || !p->requires_grad)
            throw DomainError("Adam needs parameter nodes with requires_grad");
        if (p->name.empty() || !names.insert(p->name).second)
            throw DomainError("Adam parameters must be uniquely named (got '" +
                              p->name + "')");
        m_.push_back(Tensor::zeros(p->value.shape()));
        v_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& theta = params_[i]->value;
        const Tensor& grad = params_[i]->grad;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        const int64_t n = theta.numel();
        for (int64_t j = 0; j < n; ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            theta[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p->grad = Tensor();
}

void Adam::save_state(WeightFile& wf, const std::string& prefix) const {
    wf.put_scalar(prefix + "t", static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        wf.put(prefix + params_[i]->name + ".m", m_[i]);
        wf.put(prefix + params_[i]->name + ".v", v_[i]);
    }
}

void Adam::load_state(const WeightFile& wf, const std::string& prefix) {
    t_ = static_cast<int64_t>(wf.get_scalar(prefix + "t"));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor m = wf.get(prefix + params_[i]->name + ".m");
        Tensor v = wf.get(prefix + params_[i]->name + ".v");
        if (!m.same_shape(params_[i]->value) || !v.same_shape(params_[i]->value))
            throw IoError("optimizer state shape mismatch for '" + params_[i]->name +
                          "'");
        m_[i] = std::move(m);
        v_[i] = std::move(v);
    }
}

void Adam::snap_f32() {
    for (auto& m : m_) f32_snap(m);
    for (auto& v : v_) f32_snap(v);
}

} // namespace perceptlab::nn
