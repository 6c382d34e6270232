#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "helpers.hpp"
#include "perceptlab/adversarial/adversarial.hpp"
#include "perceptlab/backbones/backbone.hpp"
#include "perceptlab/core/image_io.hpp"
#include "perceptlab/core/resample.hpp"
#include "perceptlab/nn/adam.hpp"
#include "perceptlab/nn/schedule.hpp"
#include "perceptlab/nn/weights.hpp"
#include "perceptlab/objective/objective.hpp"
#include "perceptlab/perceptual/metric.hpp"
#include "perceptlab/srharness/srharness.hpp"

using namespace perceptlab;
using namespace perceptlab::srharness;

namespace {

std::vector<SRPair> toy_pairs(int n, int scale, int hr = 16, uint64_t seed = 11) {
    std::vector<SRPair> out;
    for (int i = 0; i < n; ++i) {
        ImageTensor ref(testutil::random_image(3, hr, hr, seed + i));
        ImageTensor low = bicubic_downsample(ref, scale);
        out.push_back({low, ref});
    }
    return out;
}

SRModelSpec tiny_spec(int scale = 2, int channels = 4, int blocks = 1,
                      uint64_t init_seed = 3) {
    SRModelSpec spec;
    spec.scale = scale;
    spec.channels = channels;
    spec.blocks = blocks;
    spec.init_seed = init_seed;
    return spec;
}

} // namespace

TEST_CASE("validate_schedule rejects malformed schedules") {
    TrainSchedule ok{1, 100, 1e-3, {10, 20}, 4};
    CHECK_NOTHROW(validate_schedule(ok));

    TrainSchedule s = ok;
    s.stage = 3;
    CHECK_THROWS_AS(validate_schedule(s), ConfigError);

    s = ok;
    s.total_iters = 0;
    CHECK_THROWS_AS(validate_schedule(s), ConfigError);

    s = ok;
    s.initial_lr = 0.0;
    CHECK_THROWS_AS(validate_schedule(s), ConfigError);
    s.initial_lr = -1e-3;
    CHECK_THROWS_AS(validate_schedule(s), ConfigError);

    s = ok;
    s.batch_size = 0;
    CHECK_THROWS_AS(validate_schedule(s), ConfigError);

    s = ok;
    s.decay_steps = {0, 20};
    CHECK_THROWS_AS(validate_schedule(s), ConfigError);
    s.decay_steps = {10, 100};
    CHECK_THROWS_AS(validate_schedule(s), ConfigError);
    s.decay_steps = {20, 10};
    CHECK_THROWS_AS(validate_schedule(s), ConfigError);
    s.decay_steps = {10, 10};
    CHECK_THROWS_AS(validate_schedule(s), ConfigError);
}

TEST_CASE("built-in schedules carry the documented constants") {
    const TrainSchedule p1 = paper_stage1_schedule();
    CHECK(p1.stage == 1);
    CHECK(p1.total_iters == 100000);
    CHECK(p1.initial_lr == 2e-4);
    CHECK(p1.decay_steps.empty());
    CHECK(p1.batch_size == 32);

    const TrainSchedule p2 = paper_stage2_schedule();
    CHECK(p2.stage == 2);
    CHECK(p2.total_iters == 400000);
    CHECK(p2.initial_lr == 2e-4);
    CHECK(p2.decay_steps == std::vector<int>{150000, 300000, 350000, 375000});
    CHECK(p2.batch_size == 32);

    const TrainSchedule d1 = desk_stage1_schedule();
    CHECK(d1.stage == 1);
    CHECK(d1.total_iters == 2000);
    CHECK(d1.initial_lr == 2e-4);
    CHECK(d1.decay_steps.empty());
    CHECK(d1.batch_size == 8);

    const TrainSchedule d2 = desk_stage2_schedule();
    CHECK(d2.stage == 2);
    CHECK(d2.total_iters == 3000);
    CHECK(d2.initial_lr == 2e-4);
    CHECK(d2.batch_size == 8);
    // same fractional positions as the long run, scaled down
    REQUIRE(d2.decay_steps.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        const double frac =
            static_cast<double>(d2.decay_steps[i]) / d2.total_iters;
        const double ref =
            static_cast<double>(p2.decay_steps[i]) / p2.total_iters;
        CHECK(std::abs(frac - ref) < 1e-3);
    }
    CHECK_NOTHROW(validate_schedule(d2));
    CHECK_NOTHROW(validate_schedule(p2));
}

TEST_CASE("lr_at halves at each decay boundary of the long stage-2 run") {
    const TrainSchedule s = paper_stage2_schedule();
    CHECK(lr_at(s, 1) == 2e-4);
    CHECK(lr_at(s, 149999) == 2e-4);
    CHECK(lr_at(s, 150000) == 1e-4);
    CHECK(lr_at(s, 299999) == 1e-4);
    CHECK(lr_at(s, 300000) == 5e-5);
    CHECK(lr_at(s, 310000) == 5e-5);
    CHECK(lr_at(s, 349999) == 5e-5);
    CHECK(lr_at(s, 350000) == 2.5e-5);
    CHECK(lr_at(s, 375000) == 1.25e-5);
    CHECK(lr_at(s, 400000) == 1.25e-5);
}

TEST_CASE("lr_at equals initial_lr * 2^-(decays passed)") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        TrainSchedule s{1, 1000, 1e-3, {}, 4};
        int step = 1 + static_cast<int>(rng.uniform_int(200));
        while (step < s.total_iters && s.decay_steps.size() < 6) {
            s.decay_steps.push_back(step);
            step += 1 + static_cast<int>(rng.uniform_int(300));
        }
        validate_schedule(s);
        for (int iter : {1, 57, 313, 999, 1000}) {
            int count = 0;
            for (int d : s.decay_steps)
                if (d <= iter) ++count;
            CHECK(lr_at(s, iter) == s.initial_lr * std::pow(2.0, -count));
        }
    }
}

TEST_CASE("make_pairs builds bicubic LR/HR pairs deterministically") {
    testutil::TempDir dir("pairs");
    testutil::write_toy_pngs(dir.path, 6, 2, 3, 16, 16, 5);

    SRDatasetSpec ds;
    ds.reference_dir = dir.path.string();
    ds.scale = 4;
    ds.split = "train";

    const auto a = make_pairs(ds, 42);
    const auto b = make_pairs(ds, 42);
    REQUIRE(a.size() == 6);
    REQUIRE(b.size() == 6);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(testutil::bitwise_equal(a[i].reference.tensor(), b[i].reference.tensor()));
        CHECK(testutil::bitwise_equal(a[i].low_res.tensor(), b[i].low_res.tensor()));
        // the low-res side is exactly the bicubic downsample of the reference
        const Tensor lr = bicubic_downsample(a[i].reference, ds.scale).tensor();
        CHECK(testutil::bitwise_equal(a[i].low_res.tensor(), lr));
        CHECK(a[i].low_res.height() == 4);
        CHECK(a[i].low_res.width() == 4);
    }

    const auto c = make_pairs(ds, 43);
    bool same_order = true;
    for (size_t i = 0; i < a.size() && same_order; ++i)
        same_order = testutil::bitwise_equal(a[i].reference.tensor(),
                                             c[i].reference.tensor());
    CHECK_FALSE(same_order);
}

TEST_CASE("make_pairs skips images not divisible by the scale") {
    testutil::TempDir dir("pairs_skip");
    write_png(dir.path / "good.png", ImageTensor(testutil::quantized_image(3, 8, 8, 1)));
    write_png(dir.path / "odd.png", ImageTensor(testutil::quantized_image(3, 9, 9, 2)));

    SRDatasetSpec ds;
    ds.reference_dir = dir.path.string();
    ds.scale = 4;
    const auto pairs = make_pairs(ds, 1);
    CHECK(pairs.size() == 1);
    CHECK(pairs[0].reference.height() == 8);

    SRDatasetSpec all_odd = ds;
    all_odd.scale = 5;
    CHECK_THROWS_AS(make_pairs(all_odd, 1), IoError); // everything skipped

    SRDatasetSpec empty = ds;
    empty.reference_dir = (dir.path / "nope").string();
    CHECK_THROWS_AS(make_pairs(empty, 1), IoError);
}

TEST_CASE("untrained model is exactly the bicubic upsampler") {
    for (int scale : {2, 4}) {
        SRModel model(tiny_spec(scale, 6, 2, /*init_seed=*/17));
        ImageTensor low(testutil::random_image(3, 6, 5, 31 + scale));
        const ImageTensor out = model.infer(low);
        const ImageTensor skip =
            ImageTensor::from_tensor_clamped(bicubic_upsample(low.tensor(), scale));
        CHECK(testutil::bitwise_equal(out.tensor(), skip.tensor()));
        CHECK(out.height() == low.height() * scale);
        CHECK(out.width() == low.width() * scale);
    }
}

TEST_CASE("model parameters are uniquely named and init is seed-determined") {
    SRModel a(tiny_spec(2, 4, 2, 9));
    SRModel b(tiny_spec(2, 4, 2, 9));
    SRModel c(tiny_spec(2, 4, 2, 10));

    const auto pa = a.params();
    std::set<std::string> names;
    for (const auto& p : pa) names.insert(p->name);
    CHECK(names.size() == pa.size());

    const auto pb = b.params();
    REQUIRE(pa.size() == pb.size());
    bool same = true, diff = false;
    const auto pc = c.params();
    for (size_t i = 0; i < pa.size(); ++i) {
        same = same && testutil::bitwise_equal(pa[i]->value, pb[i]->value);
        if (!testutil::bitwise_equal(pa[i]->value, pc[i]->value)) diff = true;
    }
    CHECK(same);
    CHECK(diff);
}

TEST_CASE("model rejects bad specs and missing weight files") {
    CHECK_THROWS_AS(SRModel(tiny_spec(0)), ConfigError);
    auto s = tiny_spec();
    s.channels = 0;
    CHECK_THROWS_AS(SRModel{s}, ConfigError);
    s = tiny_spec();
    s.blocks = 0;
    CHECK_THROWS_AS(SRModel{s}, ConfigError);
    s = tiny_spec();
    s.weight_path = "/nonexistent/sr.plwt";
    CHECK_THROWS_AS(SRModel{s}, ConfigError);
}

TEST_CASE("checkpoint round-trips the model, stage, and iteration") {
    testutil::TempDir dir("ckpt");
    SRModel model(tiny_spec(2, 4, 1, 21));
    nn::Adam opt(model.params());

    const std::string w = (dir.path / "m.plwt").string();
    const std::string sc = (dir.path / "m.json").string();
    save_sr_checkpoint(model, opt, 77, 1, w, sc);

    int64_t iter = -1;
    int stage = -1;
    SRModel loaded = load_sr_model(w, sc, &iter, &stage);
    CHECK(iter == 77);
    CHECK(stage == 1);
    CHECK(loaded.spec().scale == 2);
    CHECK(loaded.spec().channels == 4);
    CHECK(loaded.spec().blocks == 1);

    // loaded weights match an f32 snap of the live model
    model.snap_f32();
    const auto pa = model.params();
    const auto pb = loaded.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        CHECK(testutil::bitwise_equal(pa[i]->value, pb[i]->value));

    CHECK_THROWS_AS(load_sr_model(w, (dir.path / "nope.json").string(), &iter, &stage),
                    IoError);
}

TEST_CASE("training a loaded checkpoint matches the uninterrupted run") {
    testutil::TempDir dir("resume");
    const auto pairs = toy_pairs(4, 2, 8);
    const uint64_t seed = 404;

    // uninterrupted: 10 iterations, periodic save at 5 so the f32 snap
    // history matches the resumed run
    TrainSchedule full{1, 10, 1e-3, {}, 2};
    SRModel a(tiny_spec(2, 4, 1, 55));
    nn::Adam opt_a(a.params());
    CheckpointSink sink_a{(dir.path / "a.plwt").string(), (dir.path / "a.json").string(), 5};
    const auto log_a = train_stage1(a, opt_a, pairs, full, seed, 0, sink_a);
    REQUIRE(log_a.size() == 10);

    // interrupted: stop at 5, reload, continue to 10
    TrainSchedule half = full;
    half.total_iters = 5;
    SRModel b(tiny_spec(2, 4, 1, 55));
    nn::Adam opt_b(b.params());
    CheckpointSink sink_b{(dir.path / "b.plwt").string(), (dir.path / "b.json").string(), 0};
    train_stage1(b, opt_b, pairs, half, seed, 0, sink_b);

    int64_t it = 0;
    int st = 0;
    SRModel b2 = load_sr_model(sink_b.weights_path, sink_b.sidecar_path, &it, &st);
    REQUIRE(it == 5);
    REQUIRE(st == 1);
    nn::Adam opt_b2(b2.params());
    load_sr_optimizer(opt_b2, sink_b.weights_path);
    CHECK(opt_b2.t() == 5);
    CheckpointSink sink_b2{(dir.path / "b2.plwt").string(), (dir.path / "b2.json").string(), 0};
    const auto log_b = train_stage1(b2, opt_b2, pairs, full, seed, 5, sink_b2);
    REQUIRE(log_b.size() == 5);
    for (size_t i = 0; i < log_b.size(); ++i) {
        CHECK(log_b[i].iter == log_a[5 + i].iter);
        CHECK(log_b[i].l_rec == log_a[5 + i].l_rec);
    }

    const nn::WeightFile wa = nn::WeightFile::load(sink_a.weights_path);
    const nn::WeightFile wb = nn::WeightFile::load(sink_b2.weights_path);
    CHECK(wa.content_hash() == wb.content_hash());
}

TEST_CASE("stage-1 training reduces the reconstruction loss") {
    const auto pairs = toy_pairs(4, 2, 8);
    SRModel model(tiny_spec(2, 4, 1, 7));
    nn::Adam opt(model.params());
    TrainSchedule sched{1, 60, 1e-3, {30}, 2};
    const auto log = train_stage1(model, opt, pairs, sched, 12, 0, {});
    REQUIRE(log.size() == 60);
    for (size_t i = 0; i < log.size(); ++i) {
        CHECK(log[i].iter == static_cast<int64_t>(i) + 1);
        CHECK(log[i].lr == lr_at(sched, static_cast<int>(i) + 1));
        CHECK(log[i].l_per == 0.0);
        CHECK(log[i].l_adv == 0.0);
        CHECK(log[i].total == log[i].l_rec);
        CHECK(std::isfinite(log[i].l_rec));
    }
    CHECK(log.back().lr == 5e-4);

    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += log[i].l_rec;
        tail += log[log.size() - 1 - i].l_rec;
    }
    CHECK(tail < head);

    CHECK_THROWS_AS(train_stage1(model, opt, {}, sched, 12, 0, {}), DomainError);
    TrainSchedule wrong = sched;
    wrong.stage = 2;
    CHECK_THROWS_AS(train_stage1(model, opt, pairs, wrong, 12, 0, {}), ConfigError);
}

TEST_CASE("divergence aborts stage 1 and flushes the last good checkpoint") {
    testutil::TempDir dir("diverge");
    const auto pairs = toy_pairs(2, 2, 8);
    SRModel model(tiny_spec(2, 4, 1, 7));
    nn::Adam opt(model.params());
    // Adam steps are lr-bounded, so the weights land at ~1e300 after one step
    // and the next forward pass overflows to inf
    TrainSchedule sched{1, 50, 1e300, {}, 2};
    CheckpointSink sink{(dir.path / "last.plwt").string(), (dir.path / "last.json").string(), 0};

    bool threw = false;
    try {
        train_stage1(model, opt, pairs, sched, 3, 0, sink);
    } catch (const DivergenceError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("iteration") != std::string::npos);
    }
    REQUIRE(threw);
    REQUIRE(std::filesystem::exists(sink.weights_path));

    int64_t it = -1;
    int st = -1;
    SRModel last = load_sr_model(sink.weights_path, sink.sidecar_path, &it, &st);
    CHECK(st == 1);
    CHECK(it >= 0);
    CHECK(it < 50);
    for (const auto& p : last.params()) CHECK(p->value.all_finite());
}

TEST_CASE("stage-2 training composes reconstruction, perceptual, and adversarial terms") {
    const auto pairs = toy_pairs(4, 2, 16);
    const backbones::BackboneSpec bb =
        backbones::BackboneRegistry::instance().get("tiny");
    auto metric = std::make_shared<perceptual::PerceptualMetric>(
        perceptual::make_metric(bb));
    auto vanilla = [&bb](uint64_t head_seed) {
        adversarial::DiscriminatorSpec d;
        d.backbone = bb;
        d.head_seed = head_seed;
        return d;
    };

    SUBCASE("perceptual-only objective runs without a discriminator") {
        SRModel model(tiny_spec(2, 4, 1, 7));
        nn::Adam opt(model.params());
        objective::ObjectiveConfig obj = objective::make_setting(objective::SettingName::P, metric);
        TrainSchedule sched{2, 8, 1e-4, {}, 2};
        const auto log = train_stage2(model, opt, obj, nullptr, pairs, sched, 5, 0, {});
        REQUIRE(log.size() == 8);
        for (const auto& r : log) {
            CHECK(r.l_adv == 0.0);
            CHECK(r.l_d == 0.0);
            CHECK(r.l_per > 0.0);
            CHECK(std::isfinite(r.total));
            CHECK(r.total == doctest::Approx(r.l_per).epsilon(1e-12));
        }
    }

    SUBCASE("full objective updates the discriminator too") {
        SRModel model(tiny_spec(2, 4, 1, 7));
        nn::Adam opt(model.params());
        auto disc = std::make_shared<adversarial::Discriminator>(
            vanilla(derive_seed(5, "disc.head")));
        nn::Adam disc_opt(disc->params());
        objective::ObjectiveConfig obj = objective::make_setting(objective::SettingName::RPA, metric, disc);
        TrainSchedule sched{2, 6, 1e-4, {}, 2};
        const auto log =
            train_stage2(model, opt, obj, &disc_opt, pairs, sched, 5, 0, {});
        REQUIRE(log.size() == 6);
        for (const auto& r : log) {
            CHECK(std::isfinite(r.l_adv));
            CHECK(std::isfinite(r.l_d));
            CHECK(r.l_d > 0.0);
            CHECK(std::isfinite(r.total));
        }
        CHECK(disc_opt.t() == 6);
    }

    SUBCASE("validation catches inconsistent setups") {
        SRModel model(tiny_spec(2, 4, 1, 7));
        nn::Adam opt(model.params());
        TrainSchedule sched{2, 4, 1e-4, {}, 2};

        objective::ObjectiveConfig no_metric;
        no_metric.lambda2 = 1.0;
        CHECK_THROWS_AS(
            train_stage2(model, opt, no_metric, nullptr, pairs, sched, 5, 0, {}),
            ConfigError);

        objective::ObjectiveConfig adv_no_disc = objective::make_setting(objective::SettingName::P, metric);
        adv_no_disc.lambda3 = 5e-3;
        CHECK_THROWS_AS(
            train_stage2(model, opt, adv_no_disc, nullptr, pairs, sched, 5, 0, {}),
            ConfigError);

        auto disc = std::make_shared<adversarial::Discriminator>(vanilla(1));
        objective::ObjectiveConfig with_disc = objective::make_setting(objective::SettingName::RPA, metric, disc);
        CHECK_THROWS_AS(
            train_stage2(model, opt, with_disc, nullptr, pairs, sched, 5, 0, {}),
            ConfigError);

        TrainSchedule wrong{1, 4, 1e-4, {}, 2};
        objective::ObjectiveConfig obj = objective::make_setting(objective::SettingName::P, metric);
        CHECK_THROWS_AS(
            train_stage2(model, opt, obj, nullptr, pairs, wrong, 5, 0, {}),
            ConfigError);
    }
}

TEST_CASE("psnr matches the closed form") {
    ImageTensor a(Tensor::full({3, 4, 4}, 0.5));
    CHECK(std::isinf(psnr(a, a)));

    ImageTensor b(Tensor::full({3, 4, 4}, 0.6));
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-10));

    ImageTensor c(Tensor::full({3, 4, 5}, 0.5));
    CHECK_THROWS_AS(psnr(a, c), DimensionError);
}

TEST_CASE("training log serializes with the fixed header") {
    testutil::TempDir dir("log");
    std::vector<SRTrainLogRow> log{{1, 2e-4, 0.5, 0.25, 0.0, 0.0, 0.75},
                                   {2, 1e-4, 0.25, 0.125, 0.0, 0.0, 0.375}};
    const std::string path = (dir.path / "train.csv").string();
    write_training_log(path, log);
    const std::string text = testutil::read_file(path);
    CHECK(text ==
          "iter,lr,l_rec,l_per,l_adv,l_d,total\n"
          "1,2e-04,0.5,0.25,0,0,0.75\n"
          "2,1e-04,0.25,0.125,0,0,0.375\n");
    CHECK_THROWS_AS(write_training_log((dir.path / "nope" / "x.csv").string(), log),
                    IoError);
}
