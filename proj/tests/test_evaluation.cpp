#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "perceptlab/adversarial/adversarial.hpp"
#include "perceptlab/backbones/backbone.hpp"
#include "perceptlab/core/csv.hpp"
#include "perceptlab/core/image_io.hpp"
#include "perceptlab/evaluation/evaluation.hpp"
#include "perceptlab/nn/kernels.hpp"
#include "perceptlab/nn/weights.hpp"
#include "perceptlab/perceptual/metric.hpp"

using namespace perceptlab;
using namespace perceptlab::evaluation;

namespace {

// quadratic-time average ranks: 1 + #smaller + (#equal - 1)/2
std::vector<double> brute_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        int smaller = 0, equal = 0;
        for (size_t j = 0; j < v.size(); ++j) {
            if (v[j] < v[i]) ++smaller;
            if (v[j] == v[i]) ++equal;
        }
        r[i] = 1.0 + smaller + (equal - 1) / 2.0;
    }
    return r;
}

bool is_constant(const std::vector<double>& v) {
    for (double x : v)
        if (x != v.front()) return false;
    return true;
}

double brute_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

double brute_srcc(const std::vector<double>& a, const std::vector<double>& b) {
    return brute_pearson(brute_ranks(a), brute_ranks(b));
}

std::vector<double> random_scores(Rng& rng, int n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-3.0, 7.0);
    return v;
}

LogisticParams make_params(double eta3, double eta4) {
    LogisticParams p;
    p.eta3 = eta3;
    p.eta4 = eta4;
    return p;
}

} // namespace

TEST_CASE("srcc handles ties with average ranks") {
    const std::vector<double> x{1, 2, 2, 3};
    const std::vector<double> y{1, 2, 3, 4};
    CHECK(srcc(x, y) == doctest::Approx(3.0 / std::sqrt(10.0)).epsilon(1e-12));
    CHECK(srcc(x, y) == doctest::Approx(brute_srcc(x, y)).epsilon(1e-12));

    CHECK(srcc({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
    CHECK(srcc({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
}

TEST_CASE("srcc and plcc validate their inputs") {
    CHECK_THROWS_AS(srcc({1, 2}, {1, 2}), DomainError);
    CHECK_THROWS_AS(srcc({1, 2, 3}, {1, 2}), DomainError);
    CHECK_THROWS_AS(srcc({2, 2, 2}, {1, 2, 3}), DomainError);
    CHECK_THROWS_AS(srcc({1, 2, 3}, {5, 5, 5}), DomainError);
    const double nan = std::nan("");
    CHECK_THROWS_AS(srcc({1, nan, 3}, {1, 2, 3}), DomainError);
    CHECK_THROWS_AS(plcc({1, 2}, {1, 2}), DomainError);
    CHECK_THROWS_AS(plcc({2, 2, 2}, {1, 2, 3}), DomainError);
    CHECK_THROWS_AS(plcc({1, nan, 3}, {1, 2, 3}), DomainError);
}

TEST_CASE("srcc and plcc match brute-force oracles on small exhaustive inputs") {
    // all pairs from {1..4}^n for n = 3, 4; longer vectors are spot-checked
    for (int n : {3, 4}) {
        int total = 1;
        for (int i = 0; i < n; ++i) total *= 4;
        std::vector<double> x(n), y(n);
        int checked = 0;
        for (int xi = 0; xi < total; ++xi) {
            int rem = xi;
            for (int k = 0; k < n; ++k) {
                x[k] = 1 + rem % 4;
                rem /= 4;
            }
            if (is_constant(x)) continue;
            for (int yi = 0; yi < total; ++yi) {
                rem = yi;
                for (int k = 0; k < n; ++k) {
                    y[k] = 1 + rem % 4;
                    rem /= 4;
                }
                if (is_constant(y)) continue;
                const double s = srcc(x, y);
                const double p = plcc(x, y);
                CHECK(s == doctest::Approx(brute_srcc(x, y)).epsilon(1e-12));
                CHECK(p == doctest::Approx(brute_pearson(x, y)).epsilon(1e-12));
                ++checked;
            }
        }
        CHECK(checked > total); // the loop really enumerated pairs
    }

    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 5 + static_cast<int>(rng.uniform_int(2));
        std::vector<double> x(n), y(n);
        for (int k = 0; k < n; ++k) {
            x[k] = 1 + static_cast<double>(rng.uniform_int(4));
            y[k] = 1 + static_cast<double>(rng.uniform_int(4));
        }
        if (is_constant(x) || is_constant(y)) continue;
        CHECK(srcc(x, y) == doctest::Approx(brute_srcc(x, y)).epsilon(1e-12));
        CHECK(plcc(x, y) == doctest::Approx(brute_pearson(x, y)).epsilon(1e-12));
    }
}

TEST_CASE("srcc is invariant under strictly monotone transforms") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = random_scores(rng, 12);
        const auto y = random_scores(rng, 12);
        const double base = srcc(x, y);

        auto cube = x;
        for (double& v : cube) v = v * v * v + 2.0 * v;
        CHECK(srcc(cube, y) == doctest::Approx(base).epsilon(1e-12));

        auto expy = y;
        for (double& v : expy) v = std::exp(0.5 * v);
        CHECK(srcc(x, expy) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("plcc matches the covariance formula and accepts a calibration") {
    Rng rng(31);
    const auto x = random_scores(rng, 20);
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = 2.0 * x[i] + rng.normal();
    CHECK(plcc(x, y) == doctest::Approx(brute_pearson(x, y)).epsilon(1e-12));

    // a calibration maps scores through the logistic before correlating
    const LogisticParams p = make_params(1.0, 2.0);
    std::vector<double> mapped(x.size());
    for (size_t i = 0; i < x.size(); ++i) mapped[i] = apply_rescale(p, x[i]);
    CHECK(plcc(x, y, p) == doctest::Approx(brute_pearson(mapped, y)).epsilon(1e-12));
}

TEST_CASE("apply_rescale is strictly increasing, bounded, and centered") {
    const LogisticParams p = make_params(0.3, 0.07);
    double prev = -1.0;
    for (int i = 0; i <= 400; ++i) {
        const double x = -2.0 + i * 0.0125;
        const double v = apply_rescale(p, x);
        CHECK(v > 1.0);
        CHECK(v < 100.0);
        CHECK(v > prev);
        prev = v;
    }
    CHECK(apply_rescale(p, p.eta3) == 50.5);
    // far tails approach but never reach the bounds
    CHECK(apply_rescale(p, 1e9) < 100.0);
    CHECK(apply_rescale(p, -1e9) > 1.0);

    // eta4 enters through its absolute value
    const LogisticParams neg = make_params(0.3, -0.07);
    for (double x : {-1.0, 0.0, 0.3, 2.0})
        CHECK(apply_rescale(neg, x) == apply_rescale(p, x));
}

TEST_CASE("fit_logistic recovers planted parameters from saturating data") {
    const double eta3 = 0.42, eta4 = 0.05;
    const LogisticParams truth = make_params(eta3, eta4);
    std::vector<ScoreRecord> records;
    for (int i = 0; i <= 80; ++i) {
        ScoreRecord r;
        r.item_id = "p" + std::to_string(i);
        r.raw_score = eta3 + eta4 * (-20.0 + 0.5 * i); // spans +/- 20 spreads
        r.mos = apply_rescale(truth, r.raw_score);
        records.push_back(r);
    }
    const LogisticParams fit = fit_logistic(records);
    CHECK(fit.eta1 == 100.0);
    CHECK(fit.eta2 == 1.0);
    CHECK(std::abs(fit.eta3 - eta3) <= 1e-3 * std::max(1.0, std::abs(eta3)));
    CHECK(std::abs(std::abs(fit.eta4) - eta4) <= 1e-3 * std::max(1.0, eta4));
}

TEST_CASE("fit_logistic rejects unusable inputs") {
    std::vector<ScoreRecord> records;
    for (int i = 0; i < 3; ++i) {
        ScoreRecord r;
        r.item_id = std::to_string(i);
        r.raw_score = i;
        r.mos = i + 1.0;
        records.push_back(r);
    }
    CHECK_THROWS_AS(fit_logistic(records), DomainError);

    // records without MOS do not count toward the minimum
    std::vector<ScoreRecord> sparse = records;
    for (int i = 3; i < 8; ++i) {
        ScoreRecord r;
        r.item_id = std::to_string(i);
        r.raw_score = i;
        sparse.push_back(r);
    }
    CHECK_THROWS_AS(fit_logistic(sparse), DomainError);

    std::vector<ScoreRecord> constant_raw;
    for (int i = 0; i < 6; ++i) {
        ScoreRecord r;
        r.item_id = std::to_string(i);
        r.raw_score = 2.5;
        r.mos = i;
        constant_raw.push_back(r);
    }
    CHECK_THROWS_AS(fit_logistic(constant_raw), DomainError);

    std::vector<ScoreRecord> constant_mos;
    for (int i = 0; i < 6; ++i) {
        ScoreRecord r;
        r.item_id = std::to_string(i);
        r.raw_score = i;
        r.mos = 3.0;
        constant_mos.push_back(r);
    }
    CHECK_THROWS_AS(fit_logistic(constant_mos), DomainError);
}

TEST_CASE("calibration never correlates worse than raw scores") {
    Rng rng(47);
    SUBCASE("noisy nonlinear relation") {
        std::vector<ScoreRecord> records;
        std::vector<double> x, mos;
        for (int i = 0; i < 40; ++i) {
            ScoreRecord r;
            r.item_id = std::to_string(i);
            r.raw_score = rng.uniform(-2.0, 2.0);
            r.mos = std::tanh(1.7 * r.raw_score) + 0.05 * rng.normal();
            records.push_back(r);
            x.push_back(r.raw_score);
            mos.push_back(*r.mos);
        }
        const LogisticParams fit = fit_logistic(records);
        CHECK(plcc(x, mos, fit) >= plcc(x, mos) - 1e-9);
    }
    SUBCASE("exactly affine relation uses the wide-spread fallback") {
        std::vector<ScoreRecord> records;
        std::vector<double> x, mos;
        for (int i = 0; i < 12; ++i) {
            ScoreRecord r;
            r.item_id = std::to_string(i);
            r.raw_score = 0.25 * i - 1.0;
            r.mos = 3.0 * r.raw_score + 7.0;
            records.push_back(r);
            x.push_back(r.raw_score);
            mos.push_back(*r.mos);
        }
        const LogisticParams fit = fit_logistic(records);
        CHECK(plcc(x, mos, fit) >= plcc(x, mos) - 1e-9);
        CHECK(plcc(x, mos, fit) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("split_by_content validates ratios and covers every index") {
    std::vector<std::string> keys;
    for (int c = 0; c < 10; ++c)
        for (int d = 0; d < 3; ++d) keys.push_back("c" + std::to_string(c));

    SplitSpec spec;
    spec.seed = RngSeed{5};

    SUBCASE("bad ratios") {
        SplitSpec bad = spec;
        bad.train_ratio = -0.1;
        bad.val_ratio = 0.9;
        bad.test_ratio = 0.2;
        CHECK_THROWS_AS(split_by_content(keys, bad), ConfigError);
        bad = spec;
        bad.test_ratio = 0.3; // sums to 1.1
        CHECK_THROWS_AS(split_by_content(keys, bad), ConfigError);
        CHECK_THROWS_AS(split_by_content({}, spec), DomainError);
    }

    SUBCASE("partition structure") {
        const SplitIndices s = split_by_content(keys, spec);
        std::set<int> seen;
        for (const auto* part : {&s.train, &s.val, &s.test})
            for (int i : *part) {
                CHECK(seen.insert(i).second); // disjoint
                CHECK(i >= 0);
                CHECK(i < static_cast<int>(keys.size()));
            }
        CHECK(seen.size() == keys.size()); // full cover
        CHECK(s.train.size() > s.val.size());

        // grouping keeps all variants of a content together
        auto part_of = [&](int idx) {
            if (std::count(s.train.begin(), s.train.end(), idx)) return 0;
            if (std::count(s.val.begin(), s.val.end(), idx)) return 1;
            return 2;
        };
        for (size_t i = 0; i < keys.size(); ++i)
            for (size_t j = 0; j < keys.size(); ++j)
                if (keys[i] == keys[j]) CHECK(part_of(static_cast<int>(i)) ==
                                              part_of(static_cast<int>(j)));
    }

    SUBCASE("determinism and seed sensitivity") {
        const SplitIndices a = split_by_content(keys, spec);
        const SplitIndices b = split_by_content(keys, spec);
        CHECK(a.train == b.train);
        CHECK(a.val == b.val);
        CHECK(a.test == b.test);

        SplitSpec other = spec;
        other.seed = RngSeed{6};
        const SplitIndices c = split_by_content(keys, other);
        CHECK(a.train != c.train);
    }

    SUBCASE("ungrouped splitting treats every index independently") {
        SplitSpec flat = spec;
        flat.group_by_content = false;
        const SplitIndices s = split_by_content(keys, flat);
        CHECK(s.train.size() + s.val.size() + s.test.size() == keys.size());
        // 30 indices at 6:2:2 -> exact partition sizes
        CHECK(s.train.size() == 18);
        CHECK(s.val.size() == 6);
        CHECK(s.test.size() == 6);
    }
}

TEST_CASE("content_key strips the trailing distortion suffix") {
    CHECK(content_key("c07_d3.png") == "c07");
    CHECK(content_key("image.png") == "image");
    CHECK(content_key("/a/b/c07_d3.png") == "c07");
    CHECK(content_key("a_b_c.png") == "a_b");
    CHECK(content_key("noext") == "noext");
}

TEST_CASE("load_fr_dataset resolves relative paths against the manifest") {
    testutil::TempDir dir("frds");
    write_png(dir.path / "ref0.png", testutil::quantized_image(3, 8, 8, 1));
    write_png(dir.path / "dist0.png", testutil::quantized_image(3, 8, 8, 2));

    std::vector<FrManifestRow> rows{{"dist0.png", "ref0.png", 3.5}};
    write_fr_manifest(dir.path / "toy.csv", rows);

    const FrDataset ds = load_fr_dataset(dir.path / "toy.csv");
    CHECK(ds.name == "toy");
    REQUIRE(ds.rows.size() == 1);
    CHECK(ds.rows[0].distorted_path == (dir.path / "dist0.png").string());
    CHECK(ds.rows[0].reference_path == (dir.path / "ref0.png").string());
    CHECK(ds.rows[0].mos == 3.5);

    CHECK_THROWS_AS(load_fr_dataset(dir.path / "missing.csv"), IoError);
}

TEST_CASE("run_fr_benchmark ranks by negative distance") {
    testutil::TempDir dir("frbench");
    const backbones::BackboneSpec bb =
        backbones::BackboneRegistry::instance().get("tiny");
    const perceptual::PerceptualMetric metric = perceptual::make_metric(bb);

    // MOS built from the metric itself -> SRCC must be exactly 1
    FrDataset ds;
    ds.name = "toy";
    for (int i = 0; i < 5; ++i) {
        const auto ref = testutil::quantized_image(3, 16, 16, 100 + i);
        Tensor noisy = ref.tensor();
        Rng rng(200 + i);
        for (int64_t k = 0; k < noisy.numel(); ++k)
            noisy[k] = std::clamp(noisy[k] + (0.02 + 0.03 * i) * rng.uniform(), 0.0, 1.0);
        const auto dist = ImageTensor(noisy);
        const auto rp = dir.path / ("ref" + std::to_string(i) + ".png");
        const auto dp = dir.path / ("dist" + std::to_string(i) + ".png");
        write_png(rp, ref);
        write_png(dp, dist);
        const double d = perceptual::perceptual_distance(
            metric, PairedSample(read_png(dp), read_png(rp)));
        ds.rows.push_back({dp.string(), rp.string(), -d});
    }

    const FrBenchmarkReport rep = run_fr_benchmark(metric, {ds});
    REQUIRE(rep.per_dataset.size() == 1);
    CHECK(rep.per_dataset[0].dataset == "toy");
    CHECK(rep.per_dataset[0].report.srcc == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.per_dataset[0].report.n == 5);
    CHECK(rep.per_dataset[0].report.plcc > 0.9);
    CHECK(rep.macro.srcc == rep.per_dataset[0].report.srcc);
    CHECK(rep.macro.n == 5);

    SUBCASE("macro averages across datasets") {
        FrDataset flipped = ds;
        flipped.name = "flipped";
        for (auto& row : flipped.rows) row.mos = -row.mos; // reverses the ranking
        const FrBenchmarkReport two = run_fr_benchmark(metric, {ds, flipped});
        REQUIRE(two.per_dataset.size() == 2);
        CHECK(two.per_dataset[1].report.srcc == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(two.macro.srcc ==
              doctest::Approx((two.per_dataset[0].report.srcc +
                               two.per_dataset[1].report.srcc) /
                              2.0));
        CHECK(two.macro.n == 10);
    }

    SUBCASE("serial and parallel paths agree exactly") {
        const bool was = kernels::parallel_enabled();
        kernels::set_parallel_enabled(false);
        const FrBenchmarkReport serial = run_fr_benchmark(metric, {ds});
        kernels::set_parallel_enabled(was);
        CHECK(serial.per_dataset[0].report.srcc == rep.per_dataset[0].report.srcc);
        CHECK(serial.per_dataset[0].report.plcc == rep.per_dataset[0].report.plcc);
    }

    SUBCASE("unreadable files are reported item by item") {
        FrDataset broken = ds;
        broken.rows[1].distorted_path = (dir.path / "gone1.png").string();
        broken.rows[3].reference_path = (dir.path / "gone3.png").string();
        bool threw = false;
        try {
            run_fr_benchmark(metric, {broken});
        } catch (const IoError& e) {
            threw = true;
            const std::string what = e.what();
            CHECK(what.find("gone1.png") != std::string::npos);
            CHECK(what.find("gone3.png") != std::string::npos);
        }
        CHECK(threw);
    }

    SUBCASE("fewer than 3 items is an error") {
        FrDataset small;
        small.name = "small";
        small.rows = {ds.rows[0], ds.rows[1]};
        CHECK_THROWS_AS(run_fr_benchmark(metric, {small}), DomainError);
        CHECK_THROWS_AS(run_fr_benchmark(metric, {}), DomainError);
    }
}

TEST_CASE("init mode and task names round-trip") {
    CHECK(parse_init_mode("random") == InitMode::Random);
    CHECK(parse_init_mode("gan") == InitMode::Gan);
    CHECK(parse_init_mode("imagenet-file") == InitMode::ImagenetFile);
    CHECK_THROWS_AS(parse_init_mode("imagenet"), ConfigError);
    for (InitMode m : {InitMode::Random, InitMode::Gan, InitMode::ImagenetFile})
        CHECK(parse_init_mode(init_mode_to_string(m)) == m);

    CHECK(parse_iqa_task("fr") == IqaTask::Fr);
    CHECK(parse_iqa_task("nr") == IqaTask::Nr);
    CHECK_THROWS_AS(parse_iqa_task("iqa"), ConfigError);
    for (IqaTask t : {IqaTask::Fr, IqaTask::Nr})
        CHECK(parse_iqa_task(iqa_task_to_string(t)) == t);
}

namespace {

// toy NR manifest: `contents` groups x `variants` images, MOS tied to the
// per-image noise level so ordering is learnable
std::filesystem::path write_nr_toy(const std::filesystem::path& dir, int contents,
                                   int variants, uint64_t seed) {
    std::vector<NrManifestRow> rows;
    for (int c = 0; c < contents; ++c) {
        const auto base = testutil::quantized_image(3, 16, 16, seed + c);
        for (int v = 0; v < variants; ++v) {
            Tensor t = base.tensor();
            Rng rng(seed + 977 * c + v);
            const double level = 0.08 * v;
            for (int64_t k = 0; k < t.numel(); ++k)
                t[k] = std::clamp(t[k] + level * (rng.uniform() - 0.5), 0.0, 1.0);
            const std::string name =
                "c" + std::to_string(c) + "_d" + std::to_string(v) + ".png";
            write_png(dir / name, ImageTensor(t));
            rows.push_back({name, 5.0 - level * 10.0});
        }
    }
    const auto manifest = dir / "nr.csv";
    write_nr_manifest(manifest, rows);
    return manifest;
}

TransferConfig tiny_transfer_cfg(uint64_t seed) {
    TransferConfig cfg;
    cfg.backbone_name = "tiny";
    cfg.task = IqaTask::Nr;
    cfg.split.seed = RngSeed{derive_seed(seed, "split")};
    cfg.seed = seed;
    cfg.nr_cfg.total_iters = 20;
    cfg.nr_cfg.initial_lr = 1e-3;
    cfg.nr_cfg.halve_every = 8;
    cfg.nr_cfg.batch_size = 4;
    return cfg;
}

} // namespace

TEST_CASE("run_transfer_experiment covers all three initializations") {
    testutil::TempDir dir("transfer");
    const auto manifest = write_nr_toy(dir.path, 10, 2, 9000);

    SUBCASE("random init") {
        TransferConfig cfg = tiny_transfer_cfg(1);
        const CorrelationReport a = run_transfer_experiment(cfg, manifest);
        CHECK(a.n >= 3);
        CHECK(std::isfinite(a.srcc));
        CHECK(std::isfinite(a.plcc));
        CHECK(a.srcc >= -1.0);
        CHECK(a.srcc <= 1.0);

        const CorrelationReport b = run_transfer_experiment(cfg, manifest);
        CHECK(a.srcc == b.srcc); // deterministic end to end
        CHECK(a.plcc == b.plcc);
        CHECK(a.n == b.n);
    }

    SUBCASE("gan init pulls the backbone out of a discriminator checkpoint") {
        const backbones::BackboneSpec bb =
            backbones::BackboneRegistry::instance().get("tiny");
        adversarial::DiscriminatorSpec dspec;
        dspec.backbone = bb;
        dspec.head_seed = 77;
        const adversarial::Discriminator disc(dspec);
        const std::string w = (dir.path / "disc.plwt").string();
        const std::string s = (dir.path / "disc.json").string();
        adversarial::save_discriminator(disc, 42, w, s);

        TransferConfig cfg = tiny_transfer_cfg(2);
        cfg.init.mode = InitMode::Gan;
        cfg.init.disc_weights_path = w;
        cfg.init.disc_sidecar_path = s;
        const CorrelationReport r = run_transfer_experiment(cfg, manifest);
        CHECK(r.n >= 3);
        CHECK(std::isfinite(r.srcc));

        cfg.init.disc_weights_path = (dir.path / "gone.plwt").string();
        CHECK_THROWS_AS(run_transfer_experiment(cfg, manifest), ConfigError);
    }

    SUBCASE("imagenet-file init loads a saved backbone container") {
        const backbones::Backbone donor(backbones::tiny_random_spec(123));
        nn::WeightFile wf;
        donor.save_weights(wf, "");
        const std::string path = (dir.path / "imagenet.plwt").string();
        wf.save(path);

        TransferConfig cfg = tiny_transfer_cfg(3);
        cfg.init.mode = InitMode::ImagenetFile;
        cfg.init.weight_file_path = path;
        const CorrelationReport r = run_transfer_experiment(cfg, manifest);
        CHECK(r.n >= 3);
        CHECK(std::isfinite(r.srcc));
    }
}

TEST_CASE("run_transfer_experiment supports the FR protocol") {
    testutil::TempDir dir("transfer_fr");
    std::vector<FrManifestRow> rows;
    for (int c = 0; c < 10; ++c) {
        const auto ref = testutil::quantized_image(3, 16, 16, 7000 + c);
        const std::string rname = "ref" + std::to_string(c) + ".png";
        write_png(dir.path / rname, ref);
        for (int v = 0; v < 2; ++v) {
            Tensor t = ref.tensor();
            Rng rng(7100 + 13 * c + v);
            const double level = 0.05 + 0.1 * v;
            for (int64_t k = 0; k < t.numel(); ++k)
                t[k] = std::clamp(t[k] + level * (rng.uniform() - 0.5), 0.0, 1.0);
            const std::string dname =
                "dist" + std::to_string(c) + "_" + std::to_string(v) + ".png";
            write_png(dir.path / dname, ImageTensor(t));
            rows.push_back({dname, rname, 5.0 - 4.0 * level});
        }
    }
    const auto manifest = dir.path / "fr.csv";
    write_fr_manifest(manifest, rows);

    TransferConfig cfg = tiny_transfer_cfg(4);
    cfg.task = IqaTask::Fr;
    cfg.metric_cfg.total_iters = 20;
    cfg.metric_cfg.halve_every = 10;
    cfg.metric_cfg.batch_size = 4;
    const CorrelationReport r = run_transfer_experiment(cfg, manifest);
    CHECK(r.n >= 3);
    CHECK(std::isfinite(r.srcc));
    CHECK(std::isfinite(r.plcc));
}

TEST_CASE("emit_report writes every requested section deterministically") {
    testutil::TempDir dir("report");

    ReportBundle bundle;
    ReportBundle::FrRow fr;
    fr.label = "tiny";
    fr.per_dataset = {{"live", {0.85, 0.87, 100}}, {"csiq", {0.9, 0.91, 80}}};
    fr.average = {0.875, 0.89, 180};
    bundle.fr_rows.push_back(fr);
    ReportBundle::FrRow fr2 = fr;
    fr2.label = "tiny-random";
    fr2.average = {0.7, 0.72, 180};
    bundle.fr_rows.push_back(fr2);

    bundle.transfer_rows = {{"tiny", "random", {0.5, 0.52, 12}},
                            {"tiny", "gan", {0.6, 0.62, 12}}};
    bundle.sweep_series = {{"tiny", {{1e-3, 24.0}, {5e-3, 23.5}, {2.5e-2, 22.0}}}};
    bundle.evaluator_rows = {{"maniqa", {{"setA", 3.0}, {"setB", 4.0}}},
                             {"liqe", {{"setA", 2.0}, {"setB", 5.0}}}};
    bundle.scatter_points = {{"P", 0.84, 27.1}, {"RPA", 0.88, 26.4}};

    const auto out1 = dir.path / "r1";
    emit_report(bundle, out1);
    for (const char* name :
         {"fr_correlations.csv", "fr_srcc_bars.svg", "transfer.csv",
          "transfer_bars.svg", "sweep.csv", "sweep_lines.svg", "evaluators.csv",
          "evaluator_bars.svg", "scatter.csv", "scatter.svg"})
        CHECK(std::filesystem::exists(out1 / name));

    const auto out2 = dir.path / "r2";
    emit_report(bundle, out2);
    for (const char* name : {"fr_correlations.csv", "transfer.csv", "sweep.csv",
                             "evaluators.csv", "scatter.csv", "sweep_lines.svg"})
        CHECK(testutil::read_file(out1 / name) == testutil::read_file(out2 / name));

    const std::string fr_csv = testutil::read_file(out1 / "fr_correlations.csv");
    CHECK(fr_csv.find("label,live_srcc,live_plcc,csiq_srcc,csiq_plcc,avg_srcc,"
                      "avg_plcc,n") == 0);
    CHECK(fr_csv.find("tiny,0.85,0.87,0.9,0.91,0.875,0.89,180\n") != std::string::npos);

    const std::string ev_csv = testutil::read_file(out1 / "evaluators.csv");
    CHECK(ev_csv.find("evaluator,setA,setB,std\n") == 0);
    CHECK(ev_csv.find("maniqa,3,4,0.5\n") != std::string::npos);
    CHECK(ev_csv.find("Average,2.5,4.5,1\n") != std::string::npos);
}

TEST_CASE("emit_report validates its bundle") {
    testutil::TempDir dir("report_bad");
    CHECK_THROWS_AS(emit_report(ReportBundle{}, dir.path / "empty"), DomainError);

    ReportBundle sweep_bad;
    sweep_bad.sweep_series = {{"tiny", {{0.0, 24.0}}}};
    CHECK_THROWS_AS(emit_report(sweep_bad, dir.path / "s"), DomainError);
    sweep_bad.sweep_series = {{"tiny", {{-1e-3, 24.0}}}};
    CHECK_THROWS_AS(emit_report(sweep_bad, dir.path / "s"), DomainError);

    ReportBundle fr_bad;
    ReportBundle::FrRow a;
    a.label = "a";
    a.per_dataset = {{"live", {0.8, 0.8, 10}}};
    ReportBundle::FrRow b;
    b.label = "b";
    b.per_dataset = {{"csiq", {0.8, 0.8, 10}}};
    fr_bad.fr_rows = {a, b};
    CHECK_THROWS_AS(emit_report(fr_bad, dir.path / "f"), DomainError);

    ReportBundle ev_bad;
    ev_bad.evaluator_rows = {{"m", {{"setA", 1.0}}}, {"l", {{"setB", 1.0}}}};
    CHECK_THROWS_AS(emit_report(ev_bad, dir.path / "e"), DomainError);
}
