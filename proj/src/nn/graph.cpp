#include "perceptlab/nn/graph.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

#include "perceptlab/nn/kernels.hpp"

namespace perceptlab::nn {

Tensor& Node::ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
}

namespace {

Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs)
        if (in->needs_grad) n->needs_grad = true;
    if (n->needs_grad) n->backward_fn = std::move(bw);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             a->value.shape_str() + " vs " + b->value.shape_str());
}

} // namespace

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

Var parameter(Tensor v, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->needs_grad = true;
    n->name = std::move(name);
    return n;
}

void backward(const Var& root) {
    if (root->value.numel() != 1)
        throw DimensionError("backward root must be scalar, got " +
                             root->value.shape_str());
    if (!root->needs_grad) return;

    // iterative post-order over the needs_grad subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node* in = node->inputs[idx++].get();
            if (in->needs_grad && seen.insert(in).second) stack.emplace_back(in, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] + b->value[i];
    return make(std::move(y), {a, b}, [](Node& self) {
        const int64_t n = self.value.numel();
        if (self.inputs[0]->needs_grad) {
            Tensor& ga = self.inputs[0]->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& gb = self.inputs[1]->ensure_grad();
            for (int64_t i = 0; i < n; ++i) gb[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] - b->value[i];
    return make(std::move(y), {a, b}, [](Node& self) {
        const int64_t n = self.value.numel();
        if (self.inputs[0]->needs_grad) {
            Tensor& ga = self.inputs[0]->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& gb = self.inputs[1]->ensure_grad();
            for (int64_t i = 0; i < n; ++i) gb[i] -= self.grad[i];
        }
    });
}

Var scale(const Var& a, double k) {
    Tensor y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = k * a->value[i];
    return make(std::move(y), {a}, [k](Node& self) {
        Tensor& ga = self.inputs[0]->ensure_grad();
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i) ga[i] += k * self.grad[i];
    });
}

Var add_scalar(const Var& a, double k) {
    Tensor y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] + k;
    return make(std::move(y), {a}, [](Node& self) {
        Tensor& ga = self.inputs[0]->ensure_grad();
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
    Tensor y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    return make(std::move(y), {a}, [](Node& self) {
        const Tensor& x = self.inputs[0]->value;
        Tensor& ga = self.inputs[0]->ensure_grad();
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i)
            if (x[i] > 0.0) ga[i] += self.grad[i];
    });
}

Var square(const Var& a) {
    Tensor y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = a->value[i] * a->value[i];
    return make(std::move(y), {a}, [](Node& self) {
        const Tensor& x = self.inputs[0]->value;
        Tensor& ga = self.inputs[0]->ensure_grad();
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * 2.0 * x[i];
    });
}

Var sigmoid(const Var& a) {
    Tensor y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
    return make(std::move(y), {a}, [](Node& self) {
        Tensor& ga = self.inputs[0]->ensure_grad();
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i) {
            const double s = self.value[i];
            ga[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Var log_clamped(const Var& a, double floor) {
    if (!(floor > 0.0)) throw DomainError("log_clamped floor must be positive");
    Tensor y(a->value.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i)
        y[i] = std::log(a->value[i] > floor ? a->value[i] : floor);
    return make(std::move(y), {a}, [floor](Node& self) {
        const Tensor& x = self.inputs[0]->value;
        Tensor& ga = self.inputs[0]->ensure_grad();
        const int64_t n = self.value.numel();
        for (int64_t i = 0; i < n; ++i)
            if (x[i] > floor) ga[i] += self.grad[i] / x[i];
    });
}

Var mean_all(const Var& a) {
    const int64_t n = a->value.numel();
    if (n == 0) throw DomainError("mean_all of empty tensor");
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += a->value[i];
    Tensor y({1});
    y[0] = s / static_cast<double>(n);
    return make(std::move(y), {a}, [](Node& self) {
        Tensor& ga = self.inputs[0]->ensure_grad();
        const int64_t n = ga.numel();
        const double g = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
}

Var mean_abs_diff(const Var& a, const Var& b) {
    check_same_shape(a, b, "mean_abs_diff");
    const int64_t n = a->value.numel();
    if (n == 0) throw DomainError("mean_abs_diff of empty tensors");
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += std::abs(a->value[i] - b->value[i]);
    Tensor y({1});
    y[0] = s / static_cast<double>(n);
    return make(std::move(y), {a, b}, [](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        const int64_t n = av.numel();
        const double g = self.grad[0] / static_cast<double>(n);
        const bool na = self.inputs[0]->needs_grad;
        const bool nb = self.inputs[1]->needs_grad;
        Tensor* ga = na ? &self.inputs[0]->ensure_grad() : nullptr;
        Tensor* gb = nb ? &self.inputs[1]->ensure_grad() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
            const double d = av[i] - bv[i];
            const double sg = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
            if (ga) (*ga)[i] += sg;
            if (gb) (*gb)[i] -= sg;
        }
    });
}

Var stack_mean(const std::vector<Var>& xs) {
    if (xs.empty()) throw DomainError("stack_mean of no tensors");
    for (size_t i = 1; i < xs.size(); ++i) check_same_shape(xs[0], xs[i], "stack_mean");
    Tensor y = Tensor::zeros(xs[0]->value.shape());
    const int64_t n = y.numel();
    for (const auto& x : xs)
        for (int64_t i = 0; i < n; ++i) y[i] += x->value[i];
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (int64_t i = 0; i < n; ++i) y[i] *= inv;
    return make(std::move(y), std::vector<Var>(xs), [inv](Node& self) {
        const int64_t n = self.value.numel();
        for (auto& in : self.inputs) {
            if (!in->needs_grad) continue;
            Tensor& g = in->ensure_grad();
            for (int64_t i = 0; i < n; ++i) g[i] += inv * self.grad[i];
        }
    });
}

Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
    if (terms.empty()) throw DomainError("weighted_sum of no terms");
    Tensor y({1});
    std::vector<Var> inputs;
    std::vector<double> ks;
    inputs.reserve(terms.size());
    ks.reserve(terms.size());
    double s = 0.0;
    for (const auto& [k, v] : terms) {
        if (v->value.numel() != 1)
            throw DimensionError("weighted_sum terms must be scalar, got " +
                                 v->value.shape_str());
        s += k * v->value[0];
        inputs.push_back(v);
        ks.push_back(k);
    }
    y[0] = s;
    return make(std::move(y), std::move(inputs), [ks](Node& self) {
        for (size_t i = 0; i < self.inputs.size(); ++i)
            if (self.inputs[i]->needs_grad)
                self.inputs[i]->ensure_grad()[0] += ks[i] * self.grad[0];
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const kernels::Conv2dDims d = kernels::conv2d_dims(x->value, w->value, stride, pad);
    if (b->value.ndim() != 1 || b->value.dim(0) != d.cout)
        throw DimensionError("conv2d bias must be (Cout)");
    Tensor y({d.cout, d.oh, d.ow});
    kernels::conv2d_forward(x->value, w->value, b->value, stride, pad, y);
    return make(std::move(y), {x, w, b}, [stride, pad](Node& self) {
        const Var& x = self.inputs[0];
        const Var& w = self.inputs[1];
        const Var& b = self.inputs[2];
        if (x->needs_grad)
            kernels::conv2d_backward_input(self.grad, w->value, stride, pad,
                                           x->ensure_grad());
        if (w->needs_grad || b->needs_grad) {
            Tensor gw = Tensor::zeros(w->value.shape());
            Tensor gb = Tensor::zeros(b->value.shape());
            kernels::conv2d_backward_params(self.grad, x->value, stride, pad, gw, gb);
            if (w->needs_grad) {
                Tensor& dst = w->ensure_grad();
                for (int64_t i = 0; i < gw.numel(); ++i) dst[i] += gw[i];
            }
            if (b->needs_grad) {
                Tensor& dst = b->ensure_grad();
                for (int64_t i = 0; i < gb.numel(); ++i) dst[i] += gb[i];
            }
        }
    });
}

Var pixel_shuffle(const Var& x, int upscale) {
    if (upscale < 1) throw DomainError("pixel_shuffle upscale must be >= 1");
    const Tensor& v = x->value;
    if (v.ndim() != 3) throw DimensionError("pixel_shuffle input must be (C,H,W)");
    const int r = upscale, r2 = r * r;
    if (v.dim(0) % r2 != 0)
        throw DimensionError("pixel_shuffle channels " + std::to_string(v.dim(0)) +
                             " not divisible by " + std::to_string(r2));
    const int c = v.dim(0) / r2, h = v.dim(1), w = v.dim(2);
    Tensor y({c, h * r, w * r});
    for (int oc = 0; oc < c; ++oc)
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx)
                        y.at(oc, iy * r + dy, ix * r + dx) =
                            v.at(oc * r2 + dy * r + dx, iy, ix);
    return make(std::move(y), {x}, [r, r2, c, h, w](Node& self) {
        Tensor& gx = self.inputs[0]->ensure_grad();
        for (int oc = 0; oc < c; ++oc)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < w; ++ix)
                    for (int dy = 0; dy < r; ++dy)
                        for (int dx = 0; dx < r; ++dx)
                            gx.at(oc * r2 + dy * r + dx, iy, ix) +=
                                self.grad.at(oc, iy * r + dy, ix * r + dx);
    });
}

Var global_avg_pool(const Var& x) {
    const Tensor& v = x->value;
    if (v.ndim() != 3) throw DimensionError("global_avg_pool input must be (C,H,W)");
    const int c = v.dim(0);
    const int64_t hw = static_cast<int64_t>(v.dim(1)) * v.dim(2);
    Tensor y({c});
    for (int j = 0; j < c; ++j) {
        const double* p = v.data() + static_cast<size_t>(j) * hw;
        double s = 0.0;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
        y[j] = s / static_cast<double>(hw);
    }
    return make(std::move(y), {x}, [c, hw](Node& self) {
        Tensor& gx = self.inputs[0]->ensure_grad();
        for (int j = 0; j < c; ++j) {
            const double g = self.grad[j] / static_cast<double>(hw);
            double* p = gx.data() + static_cast<size_t>(j) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += g;
        }
    });
}

Var dot_bias(const Var& x, const Var& w, const Var& b) {
    if (x->value.ndim() != 1 || !x->value.same_shape(w->value))
        throw DimensionError("dot_bias needs matching vectors, got " +
                             x->value.shape_str() + " and " + w->value.shape_str());
    if (b->value.numel() != 1) throw DimensionError("dot_bias bias must be scalar");
    const int64_t n = x->value.numel();
    double s = b->value[0];
    for (int64_t i = 0; i < n; ++i) s += x->value[i] * w->value[i];
    Tensor y({1});
    y[0] = s;
    return make(std::move(y), {x, w, b}, [](Node& self) {
        const Tensor& xv = self.inputs[0]->value;
        const Tensor& wv = self.inputs[1]->value;
        const int64_t n = xv.numel();
        const double g = self.grad[0];
        if (self.inputs[0]->needs_grad) {
            Tensor& gx = self.inputs[0]->ensure_grad();
            for (int64_t i = 0; i < n; ++i) gx[i] += g * wv[i];
        }
        if (self.inputs[1]->needs_grad) {
            Tensor& gw = self.inputs[1]->ensure_grad();
            for (int64_t i = 0; i < n; ++i) gw[i] += g * xv[i];
        }
        if (self.inputs[2]->needs_grad) self.inputs[2]->ensure_grad()[0] += g;
    });
}

Var similarity_stage_score(const Var& x_stage, const Var& y_stage, const Tensor& alpha,
                           const Tensor& beta, double c1, double c2) {
    check_same_shape(x_stage, y_stage, "similarity_stage_score");
    const Tensor& xv = x_stage->value;
    if (xv.ndim() != 3) throw DimensionError("similarity stage must be (C,H,W)");
    const int c = xv.dim(0);
    if (alpha.numel() != c || beta.numel() != c)
        throw DimensionError("similarity coefficients must have one entry per channel");

    std::vector<double> mx(c), my(c), vx(c), vy(c), cov(c);
    kernels::stage_pair_stats(xv, y_stage->value, mx.data(), my.data(), vx.data(),
                              vy.data(), cov.data());
    double score = 0.0;
    for (int j = 0; j < c; ++j) {
        const double l = (2.0 * mx[j] * my[j] + c1) / (mx[j] * mx[j] + my[j] * my[j] + c1);
        const double s = (2.0 * cov[j] + c2) / (vx[j] + vy[j] + c2);
        score += alpha[j] * l + beta[j] * s;
    }
    Tensor out({1});
    out[0] = score;

    // stats are cheap to recompute relative to holding five arrays per stage,
    // but the backward needs them anyway, so capture by value
    return make(std::move(out), {x_stage, y_stage},
                [alpha, beta, c1, c2, mx, my, vx, vy, cov](Node& self) {
        const Tensor& xv = self.inputs[0]->value;
        const Tensor& yv = self.inputs[1]->value;
        const int c = xv.dim(0);
        const int64_t hw = static_cast<int64_t>(xv.dim(1)) * xv.dim(2);
        const double inv_n = 1.0 / static_cast<double>(hw);
        const double g = self.grad[0];
        const bool nx = self.inputs[0]->needs_grad;
        const bool ny = self.inputs[1]->needs_grad;
        Tensor* gx = nx ? &self.inputs[0]->ensure_grad() : nullptr;
        Tensor* gy = ny ? &self.inputs[1]->ensure_grad() : nullptr;
        for (int j = 0; j < c; ++j) {
            const double ln = 2.0 * mx[j] * my[j] + c1;
            const double ld = mx[j] * mx[j] + my[j] * my[j] + c1;
            const double sn = 2.0 * cov[j] + c2;
            const double sd = vx[j] + vy[j] + c2;
            // dl/dmu_x and dl/dmu_y; every pixel contributes dmu/dpix = 1/N
            const double dl_dmx = (2.0 * my[j] * ld - ln * 2.0 * mx[j]) / (ld * ld);
            const double dl_dmy = (2.0 * mx[j] * ld - ln * 2.0 * my[j]) / (ld * ld);
            // ds/dpix via dcov and dvar: dcov/dx_p = (y_p-mu_y)/N,
            // dvar_x/dx_p = 2(x_p-mu_x)/N
            const double cov_coef = 2.0 / sd * inv_n;
            const double var_coef = sn / (sd * sd) * 2.0 * inv_n;
            const double al = alpha[j], be = beta[j];
            const double* xp = xv.data() + static_cast<size_t>(j) * hw;
            const double* yp = yv.data() + static_cast<size_t>(j) * hw;
            double* gxp = gx ? gx->data() + static_cast<size_t>(j) * hw : nullptr;
            double* gyp = gy ? gy->data() + static_cast<size_t>(j) * hw : nullptr;
            for (int64_t i = 0; i < hw; ++i) {
                if (gxp)
                    gxp[i] += g * (al * dl_dmx * inv_n +
                                   be * (cov_coef * (yp[i] - my[j]) -
                                         var_coef * (xp[i] - mx[j])));
                if (gyp)
                    gyp[i] += g * (al * dl_dmy * inv_n +
                                   be * (cov_coef * (xp[i] - mx[j]) -
                                         var_coef * (yp[i] - my[j])));
            }
        }
    });
}

} // namespace perceptlab::nn
