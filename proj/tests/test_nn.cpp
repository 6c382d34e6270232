#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>

#include "helpers.hpp"
#include "perceptlab/nn/adam.hpp"
#include "perceptlab/nn/graph.hpp"
#include "perceptlab/nn/schedule.hpp"
#include "perceptlab/nn/weights.hpp"

using namespace perceptlab;
using nn::Var;

namespace {

// central finite differences of a scalar graph w.r.t. one parameter tensor
double max_rel_grad_error(const std::function<Var(const Var&)>& build, Tensor x0,
                          double h = 1e-6) {
    Var p = nn::parameter(x0, "p");
    Var root = build(p);
    REQUIRE(root->value.numel() == 1);
    nn::backward(root);
    Tensor analytic = p->grad;

    double worst = 0.0;
    for (int64_t i = 0; i < x0.numel(); ++i) {
        Tensor plus = x0, minus = x0;
        plus[i] += h;
        minus[i] -= h;
        const double fp = build(nn::constant(plus))->value[0];
        const double fm = build(nn::constant(minus))->value[0];
        const double fd = (fp - fm) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

} // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Tensor x = testutil::random_tensor({3, 4}, 1);

    auto cases = std::vector<std::function<Var(const Var&)>>{
        [](const Var& p) { return nn::mean_all(nn::scale(p, 2.5)); },
        [](const Var& p) { return nn::mean_all(nn::add_scalar(p, -0.3)); },
        [](const Var& p) { return nn::mean_all(nn::neg(p)); },
        [](const Var& p) { return nn::mean_all(nn::square(p)); },
        [](const Var& p) { return nn::mean_all(nn::sigmoid(p)); },
        [](const Var& p) { return nn::mean_all(nn::log_clamped(nn::add_scalar(p, 1.5), 1e-12)); },
        [](const Var& p) { return nn::mean_all(nn::add(p, nn::square(p))); },
        [](const Var& p) {
            return nn::mean_all(nn::sub(nn::square(p), nn::scale(p, 0.5)));
        },
    };
    for (auto& build : cases) CHECK(max_rel_grad_error(build, x) < 1e-5);
}

TEST_CASE("relu gradient away from the kink") {
    Tensor x = testutil::random_tensor({3, 4}, 2);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = x[i] - 0.5 + (x[i] > 0.5 ? 0.2 : -0.2);
    auto build = [](const Var& p) { return nn::mean_all(nn::relu(p)); };
    CHECK(max_rel_grad_error(build, x) < 1e-5);
}

TEST_CASE("loss-shaped op gradients") {
    Tensor a = testutil::random_tensor({2, 3, 3}, 3);
    Tensor b = testutil::random_tensor({2, 3, 3}, 4);
    for (int64_t i = 0; i < a.numel(); ++i) a[i] += 0.05; // keep |a-b| off zero
    auto l1 = [&](const Var& p) { return nn::mean_abs_diff(p, nn::constant(b)); };
    CHECK(max_rel_grad_error(l1, a) < 1e-5);

    auto stacked = [&](const Var& p) {
        std::vector<Var> xs{nn::mean_all(nn::square(p)),
                            nn::mean_all(nn::scale(p, 0.25))};
        return nn::stack_mean(xs);
    };
    CHECK(max_rel_grad_error(stacked, a) < 1e-5);

    auto weighted = [&](const Var& p) {
        return nn::weighted_sum({{0.3, nn::mean_all(nn::square(p))},
                                 {1.7, nn::mean_all(nn::sigmoid(p))}});
    };
    CHECK(max_rel_grad_error(weighted, a) < 1e-5);
}

TEST_CASE("conv2d matches a naive oracle and its gradients check out") {
    Tensor x = testutil::random_tensor({2, 5, 6}, 5);
    Tensor w = testutil::random_tensor({3, 2, 3, 3}, 6);
    Tensor b = testutil::random_tensor({3}, 7);

    for (int stride : {1, 2}) {
        Var y = nn::conv2d(nn::constant(x), nn::constant(w), nn::constant(b), stride, 1);
        const int oh = (5 + 2 - 3) / stride + 1;
        const int ow = (6 + 2 - 3) / stride + 1;
        REQUIRE(y->value.shape() == std::vector<int>{3, oh, ow});
        for (int co = 0; co < 3; ++co)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b[co];
                    for (int ci = 0; ci < 2; ++ci)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = oy * stride + ky - 1;
                                const int ix = ox * stride + kx - 1;
                                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                                acc += x.at(ci, iy, ix) *
                                       w[((static_cast<int64_t>(co) * 2 + ci) * 3 + ky) * 3 + kx];
                            }
                    CHECK(y->value.at(co, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
                }
    }

    auto wrt_x = [&](const Var& p) {
        return nn::mean_all(nn::conv2d(p, nn::constant(w), nn::constant(b), 1, 1));
    };
    CHECK(max_rel_grad_error(wrt_x, x) < 1e-5);
    auto wrt_w = [&](const Var& p) {
        return nn::mean_all(nn::conv2d(nn::constant(x), p, nn::constant(b), 2, 1));
    };
    CHECK(max_rel_grad_error(wrt_w, w) < 1e-5);
    auto wrt_b = [&](const Var& p) {
        return nn::mean_all(nn::square(
            nn::conv2d(nn::constant(x), nn::constant(w), p, 1, 1)));
    };
    CHECK(max_rel_grad_error(wrt_b, b) < 1e-5);
}

TEST_CASE("pixel_shuffle rearranges (C*r^2,H,W) to (C,H*r,W*r)") {
    Tensor x = testutil::random_tensor({8, 2, 3}, 8); // C=2, r=2
    Var y = nn::pixel_shuffle(nn::constant(x), 2);
    REQUIRE(y->value.shape() == std::vector<int>{2, 4, 6});
    for (int c = 0; c < 2; ++c)
        for (int oy = 0; oy < 4; ++oy)
            for (int ox = 0; ox < 6; ++ox) {
                const int iy = oy / 2, ix = ox / 2;
                const int sub = (oy % 2) * 2 + (ox % 2);
                CHECK(y->value.at(c, oy, ox) == x.at(c * 4 + sub, iy, ix));
            }

    auto build = [](const Var& p) {
        return nn::mean_all(nn::square(nn::pixel_shuffle(p, 2)));
    };
    CHECK(max_rel_grad_error(build, x) < 1e-5);
}

TEST_CASE("pooling and head ops") {
    Tensor x = testutil::random_tensor({3, 4, 5}, 9);
    Var pooled = nn::global_avg_pool(nn::constant(x));
    REQUIRE(pooled->value.shape() == std::vector<int>{3});
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 5; ++xx) mean += x.at(c, y, xx);
        CHECK(pooled->value[c] == doctest::Approx(mean / 20.0).epsilon(1e-12));
    }

    Tensor wv = testutil::random_tensor({3}, 10);
    Tensor bv = testutil::random_tensor({1}, 11);
    auto build = [&](const Var& p) {
        return nn::dot_bias(nn::global_avg_pool(p), nn::constant(wv), nn::constant(bv));
    };
    CHECK(max_rel_grad_error(build, x) < 1e-5);

    auto wrt_w = [&](const Var& p) {
        return nn::dot_bias(nn::global_avg_pool(nn::constant(x)), p, nn::constant(bv));
    };
    CHECK(max_rel_grad_error(wrt_w, wv) < 1e-5);
}

TEST_CASE("similarity_stage_score gradient and value") {
    Tensor xs = testutil::random_tensor({2, 4, 4}, 12);
    Tensor ys = testutil::random_tensor({2, 4, 4}, 13);
    Tensor alpha = Tensor::from_data({2}, {0.3, 0.1});
    Tensor beta = Tensor::from_data({2}, {0.25, 0.35});
    const double c1 = 1e-6, c2 = 1e-6;

    auto build = [&](const Var& p) {
        return nn::similarity_stage_score(p, nn::constant(ys), alpha, beta, c1, c2);
    };
    CHECK(max_rel_grad_error(build, xs, 1e-5) < 1e-4);

    // value oracle: per-channel texture/structure similarities
    double expect = 0.0;
    for (int c = 0; c < 2; ++c) {
        double mx = 0, my = 0;
        for (int i = 0; i < 16; ++i) {
            mx += xs[c * 16 + i];
            my += ys[c * 16 + i];
        }
        mx /= 16;
        my /= 16;
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < 16; ++i) {
            vx += (xs[c * 16 + i] - mx) * (xs[c * 16 + i] - mx);
            vy += (ys[c * 16 + i] - my) * (ys[c * 16 + i] - my);
            cov += (xs[c * 16 + i] - mx) * (ys[c * 16 + i] - my);
        }
        vx /= 16;
        vy /= 16;
        cov /= 16;
        const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
        const double s = (2 * cov + c2) / (vx + vy + c2);
        expect += alpha[c] * l + beta[c] * s;
    }
    Var score = build(nn::constant(xs));
    CHECK(score->value[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gradient accumulates across reused nodes") {
    Tensor x0 = Tensor::from_data({2}, {0.4, -0.7});
    Var p = nn::parameter(x0, "p");
    Var reused = nn::square(p);
    Var root = nn::mean_all(nn::add(reused, nn::scale(reused, 2.0)));
    nn::backward(root);
    // d/dx mean(3 x^2) = 3 x
    CHECK(p->grad[0] == doctest::Approx(3.0 * x0[0]).epsilon(1e-12));
    CHECK(p->grad[1] == doctest::Approx(3.0 * x0[1]).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar root") {
    Var p = nn::parameter(testutil::random_tensor({2, 2}, 14), "p");
    CHECK_THROWS_AS(nn::backward(nn::square(p)), DimensionError);
}

TEST_CASE("weight file round-trip quantizes through f32 exactly once") {
    testutil::TempDir dir("weights");
    Tensor t = testutil::random_tensor({3, 2}, 15);
    nn::WeightFile wf;
    wf.put("layer.w", t);
    wf.put_scalar("iter", 123.0);

    const auto path = (dir.path / "w.plwt").string();
    wf.save(path);
    nn::WeightFile back = nn::WeightFile::load(path);

    REQUIRE(back.has("layer.w"));
    Tensor q = back.get("layer.w");
    REQUIRE(q.same_shape(t));
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(q[i] == nn::f32_round(t[i]));
    CHECK(back.get_scalar("iter") == 123.0);
    CHECK(back.content_hash() == wf.content_hash());

    // second round-trip is the identity (already f32)
    nn::WeightFile again;
    again.put("layer.w", q);
    Tensor q2 = again.get("layer.w");
    for (int64_t i = 0; i < q.numel(); ++i) CHECK(q2[i] == q[i]);

    CHECK_THROWS_AS(back.get("nope"), IoError);
    CHECK_THROWS_AS(nn::WeightFile::load((dir.path / "missing.plwt").string()), IoError);
}

TEST_CASE("weight file prefix stripping") {
    nn::WeightFile wf;
    wf.put("model.a", Tensor::full({1}, 1.0));
    wf.put("model.b", Tensor::full({1}, 2.0));
    wf.put("opt.c", Tensor::full({1}, 3.0));
    nn::WeightFile model = wf.with_prefix_stripped("model.");
    CHECK(model.size() == 2);
    CHECK(model.has("a"));
    CHECK(model.has("b"));
    CHECK_FALSE(model.has("opt.c"));
    CHECK_THROWS_AS(wf.with_prefix_stripped("nothing."), IoError);
}

TEST_CASE("corrupt weight file is rejected") {
    testutil::TempDir dir("badweights");
    const auto path = dir.path / "bad.plwt";
    std::ofstream os(path, std::ios::binary);
    os << "NOTAWEIGHTFILE";
    os.close();
    CHECK_THROWS_AS(nn::WeightFile::load(path.string()), IoError);
}

TEST_CASE("adam single step matches the closed form") {
    Tensor x0 = Tensor::from_data({2}, {1.0, -2.0});
    Var p = nn::parameter(x0, "p");
    nn::Adam opt({p});

    // loss = mean(x^2) -> grad = x
    nn::backward(nn::mean_all(nn::square(p)));
    const double g0 = 2.0 * x0[0] / 2.0, g1 = 2.0 * x0[1] / 2.0;
    opt.step(1e-2);

    const nn::AdamConfig c{};
    auto expected = [&](double x, double g) {
        const double m = (1 - c.beta1) * g;
        const double v = (1 - c.beta2) * g * g;
        const double mh = m / (1 - c.beta1);
        const double vh = v / (1 - c.beta2);
        return x - 1e-2 * mh / (std::sqrt(vh) + c.eps);
    };
    CHECK(p->value[0] == doctest::Approx(expected(x0[0], g0)).epsilon(1e-12));
    CHECK(p->value[1] == doctest::Approx(expected(x0[1], g1)).epsilon(1e-12));
    CHECK(opt.t() == 1);

    opt.zero_grad();
    CHECK(p->grad.empty()); // lazily reallocated by the next backward pass
}

TEST_CASE("save/load-resume equals a continued run that snapped its floats") {
    const int total = 6, split = 3;
    auto loss_step = [](const Var& p, nn::Adam& opt) {
        opt.zero_grad();
        nn::backward(nn::mean_all(nn::square(p)));
        opt.step(1e-2);
    };

    // continued run: round the live state through f32 at the checkpoint
    Var pc = nn::parameter(Tensor::from_data({3}, {0.5, -0.25, 1.5}), "p");
    nn::Adam oc({pc});
    for (int i = 0; i < total; ++i) {
        if (i == split) {
            nn::f32_snap(pc->value);
            oc.snap_f32();
        }
        loss_step(pc, oc);
    }

    // resumed run: checkpoint through a weight file at the same point
    Var pr = nn::parameter(Tensor::from_data({3}, {0.5, -0.25, 1.5}), "p");
    auto opt = std::make_unique<nn::Adam>(std::vector<Var>{pr});
    for (int i = 0; i < total; ++i) {
        if (i == split) {
            nn::WeightFile wf;
            wf.put("par.p", pr->value);
            opt->save_state(wf, "adam.");
            pr = nn::parameter(wf.get("par.p"), "p");
            opt = std::make_unique<nn::Adam>(std::vector<Var>{pr});
            opt->load_state(wf, "adam.");
        }
        loss_step(pr, *opt);
    }

    for (int64_t i = 0; i < pc->value.numel(); ++i)
        CHECK(pc->value[i] == pr->value[i]);
}

TEST_CASE("adam rejects duplicate parameter names") {
    Var a = nn::parameter(Tensor::full({1}, 0.0), "same");
    Var b = nn::parameter(Tensor::full({1}, 1.0), "same");
    CHECK_THROWS_AS(nn::Adam({a, b}), DomainError);
}

TEST_CASE("lr schedules") {
    CHECK(nn::lr_at(2e-4, {150, 300}, 0) == 2e-4);
    CHECK(nn::lr_at(2e-4, {150, 300}, 149) == 2e-4);
    CHECK(nn::lr_at(2e-4, {150, 300}, 150) == 1e-4);
    CHECK(nn::lr_at(2e-4, {150, 300}, 299) == 1e-4);
    CHECK(nn::lr_at(2e-4, {150, 300}, 300) == 5e-5);

    // lr(iter) = initial * 2^-|{d <= iter}|
    std::vector<int> steps{10, 20, 35, 70};
    for (int iter : {0, 9, 10, 19, 20, 34, 35, 69, 70, 100}) {
        int count = 0;
        for (int d : steps)
            if (d <= iter) ++count;
        CHECK(nn::lr_at(1e-4, steps, iter) == 1e-4 * std::pow(2.0, -count));
    }

    CHECK(nn::decay_every(5000, 1000) == std::vector<int>{1000, 2000, 3000, 4000});
    auto fr = nn::decay_at_fractions(400000, {0.375, 0.75, 0.875, 0.9375});
    CHECK(fr == std::vector<int>{150000, 300000, 350000, 375000});
}
