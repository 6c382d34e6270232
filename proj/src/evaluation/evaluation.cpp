#include "perceptlab/evaluation/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "perceptlab/adversarial/adversarial.hpp"
#include "perceptlab/backbones/backbone.hpp"
#include "perceptlab/core/image_io.hpp"
#include "perceptlab/core/rng.hpp"
#include "perceptlab/nn/adam.hpp"
#include "perceptlab/nn/graph.hpp"
#include "perceptlab/nn/kernels.hpp"
#include "perceptlab/nn/schedule.hpp"

namespace fs = std::filesystem;

namespace perceptlab::evaluation {

namespace {

void check_pair_lengths(const std::vector<double>& a, const std::vector<double>& b,
                        const char* who) {
    if (a.size() != b.size())
        throw DomainError(std::string(who) + " needs equal-length vectors");
    if (a.size() < 3)
        throw DomainError(std::string(who) + " needs at least 3 samples");
    for (double v : a)
        if (!std::isfinite(v)) throw DomainError(std::string(who) + ": non-finite score");
    for (double v : b)
        if (!std::isfinite(v)) throw DomainError(std::string(who) + ": non-finite value");
}

double clamp_corr(double r) { return std::min(1.0, std::max(-1.0, r)); }

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if (!(sxx > 0.0) || !(syy > 0.0))
        throw DomainError("correlation undefined on a constant vector");
    return clamp_corr(sxy / std::sqrt(sxx * syy));
}

std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

double srcc(const std::vector<double>& scores, const std::vector<double>& mos) {
    check_pair_lengths(scores, mos, "srcc");
    return pearson(average_ranks(scores), average_ranks(mos));
}

double apply_rescale(const LogisticParams& params, double raw) {
    if (!(params.eta1 > params.eta2))
        throw DomainError("logistic params need eta1 > eta2");
    if (!std::isfinite(params.eta3) || !std::isfinite(params.eta4) ||
        std::abs(params.eta4) == 0.0)
        throw DomainError("logistic params need finite eta3 and nonzero eta4");
    const double u = (raw - params.eta3) / std::abs(params.eta4);
    return (params.eta1 - params.eta2) / (1.0 + std::exp(-u)) + params.eta2;
}

namespace {

double logistic_sse(const std::vector<double>& x, const std::vector<double>& t,
                    const LogisticParams& p) {
    double sse = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double r = apply_rescale(p, x[i]) - t[i];
        sse += r * r;
    }
    return sse;
}

struct FitCandidate {
    LogisticParams params;
    double sse = 0.0;
    bool converged = false;
};

// damped Gauss-Newton on (eta3, eta4); eta4 kept positive (the model only
// sees |eta4|). Never increases the residual.
FitCandidate lm_fit(const std::vector<double>& x, const std::vector<double>& t,
                    LogisticParams seed) {
    FitCandidate c;
    c.params = seed;
    c.params.eta4 = std::max(std::abs(seed.eta4), 1e-12);
    c.sse = logistic_sse(x, t, c.params);
    double damping = 1e-3;
    const double range = c.params.eta1 - c.params.eta2;
    for (int it = 0; it < 500 && !c.converged; ++it) {
        double a11 = 0.0, a12 = 0.0, a22 = 0.0, g1 = 0.0, g2 = 0.0;
        for (size_t i = 0; i < x.size(); ++i) {
            const double u = (x[i] - c.params.eta3) / c.params.eta4;
            const double s = 1.0 / (1.0 + std::exp(-u));
            const double r = range * s + c.params.eta2 - t[i];
            const double slope = range * s * (1.0 - s) / c.params.eta4;
            const double j1 = -slope;     // dN/deta3
            const double j2 = -slope * u; // dN/deta4
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            g1 += j1 * r;
            g2 += j2 * r;
        }
        bool accepted = false;
        for (int tries = 0; tries < 30 && !accepted; ++tries) {
            const double d11 = a11 * (1.0 + damping) + damping * 1e-12;
            const double d22 = a22 * (1.0 + damping) + damping * 1e-12;
            const double det = d11 * d22 - a12 * a12;
            if (!(std::abs(det) > 0.0) || !std::isfinite(det)) {
                damping *= 10.0;
                continue;
            }
            const double de3 = -(d22 * g1 - a12 * g2) / det;
            const double de4 = -(d11 * g2 - a12 * g1) / det;
            LogisticParams q = c.params;
            q.eta3 += de3;
            q.eta4 = std::max(std::abs(q.eta4 + de4), 1e-12);
            const double qsse = logistic_sse(x, t, q);
            if (std::isfinite(qsse) && qsse <= c.sse) {
                const double scale =
                    std::abs(c.params.eta3) + std::abs(c.params.eta4) + 1.0;
                if (std::abs(de3) + std::abs(de4) <= 1e-12 * scale ||
                    c.sse - qsse <= 1e-15 * (c.sse + 1.0))
                    c.converged = true;
                c.params = q;
                c.sse = qsse;
                damping = std::max(damping / 3.0, 1e-12);
                accepted = true;
            } else {
                damping *= 10.0;
            }
        }
        // no acceptable step at maximal damping: gradient is numerically zero
        if (!accepted) c.converged = true;
    }
    return c;
}

} // namespace

LogisticParams fit_logistic(const std::vector<ScoreRecord>& records) {
    std::vector<double> x, m;
    for (const auto& r : records)
        if (r.mos) {
            x.push_back(r.raw_score);
            m.push_back(*r.mos);
        }
    if (x.size() < 4)
        throw DomainError("logistic fit needs at least 4 records with MOS");
    for (double v : x)
        if (!std::isfinite(v)) throw DomainError("logistic fit: non-finite raw score");
    const auto [mmin_it, mmax_it] = std::minmax_element(m.begin(), m.end());
    if (!(*mmax_it > *mmin_it))
        throw DomainError("logistic fit undefined on constant MOS");
    const auto [xmin_it, xmax_it] = std::minmax_element(x.begin(), x.end());
    if (!(*xmax_it > *xmin_it))
        throw DomainError("logistic fit undefined on constant raw scores");

    // target scale: MOS mapped onto the fixed [eta2, eta1] band
    std::vector<double> t(m.size());
    for (size_t i = 0; i < m.size(); ++i)
        t[i] = 1.0 + 99.0 * (m[i] - *mmin_it) / (*mmax_it - *mmin_it);

    const double med = median_of(x);
    const double sd = population_std(x);
    const double mx = mean_of(x);
    double span = 0.0;
    for (double v : x) span = std::max(span, std::abs(v - mx));

    std::vector<LogisticParams> seeds{{100.0, 1.0, med, sd},
                                      {100.0, 1.0, med, sd / 4.0},
                                      {100.0, 1.0, med, 4.0 * sd}};
    double sxx = 0.0, sxt = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxt += (x[i] - mx) * (t[i] - mean_of(t));
    }
    const double ols_slope = sxt / sxx;
    if (ols_slope > 0.0) seeds.push_back({100.0, 1.0, mx, 99.0 / (4.0 * ols_slope)});

    FitCandidate best;
    bool have_best = false;
    double best_any_sse = std::numeric_limits<double>::infinity();
    for (const auto& seed : seeds) {
        const FitCandidate c = lm_fit(x, t, seed);
        best_any_sse = std::min(best_any_sse, c.sse);
        if (!c.converged) continue;
        if (!have_best || c.sse < best.sse) {
            best = c;
            have_best = true;
        }
    }
    if (!have_best) {
        std::ostringstream os;
        os << "logistic fit did not converge after 500 iterations (best residual "
           << best_any_sse << " over " << x.size() << " records)";
        throw FitError(os.str());
    }

    // the calibrated scores must not correlate worse than the raw ones; a
    // near-affine mapping reproduces the raw correlation when the fit cannot
    const LogisticParams affine{100.0, 1.0, mx, 1e5 * span};
    double raw_r;
    try {
        raw_r = pearson(x, m);
    } catch (const DomainError&) {
        return best.params;
    }
    std::vector<double> mapped(x.size());
    for (size_t i = 0; i < x.size(); ++i) mapped[i] = apply_rescale(best.params, x[i]);
    double cal_r = -2.0;
    try {
        cal_r = pearson(mapped, m);
    } catch (const DomainError&) {
    }
    if (!(cal_r + 1e-12 >= raw_r)) return affine;
    return best.params;
}

double plcc(const std::vector<double>& scores, const std::vector<double>& mos,
            const std::optional<LogisticParams>& calibration) {
    check_pair_lengths(scores, mos, "plcc");
    if (!calibration) return pearson(scores, mos);
    std::vector<double> mapped(scores.size());
    for (size_t i = 0; i < scores.size(); ++i)
        mapped[i] = apply_rescale(*calibration, scores[i]);
    return pearson(mapped, mos);
}

SplitIndices split_by_content(const std::vector<std::string>& content_keys,
                              const SplitSpec& spec) {
    if (spec.train_ratio < 0.0 || spec.val_ratio < 0.0 || spec.test_ratio < 0.0)
        throw ConfigError("split ratios must be nonnegative");
    if (std::abs(spec.train_ratio + spec.val_ratio + spec.test_ratio - 1.0) > 1e-9)
        throw ConfigError("split ratios must sum to 1");
    const int n = static_cast<int>(content_keys.size());
    if (n == 0) throw DomainError("cannot split an empty dataset");

    std::unordered_map<std::string, size_t> group_of;
    std::vector<std::vector<int>> groups;
    for (int i = 0; i < n; ++i) {
        const std::string key =
            spec.group_by_content ? content_keys[static_cast<size_t>(i)]
                                  : std::to_string(i);
        auto [it, inserted] = group_of.try_emplace(key, groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(i);
    }

    std::vector<size_t> order(groups.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(derive_seed(spec.seed.value, "split"));
    rng.shuffle(order);

    const long t1 = std::lround(spec.train_ratio * n);
    const long t2 = std::lround((spec.train_ratio + spec.val_ratio) * n);
    SplitIndices out;
    long assigned = 0;
    for (size_t gi : order) {
        auto& dst = assigned < t1 ? out.train : (assigned < t2 ? out.val : out.test);
        for (int i : groups[gi]) dst.push_back(i);
        assigned += static_cast<long>(groups[gi].size());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::string content_key(const std::string& image_path) {
    const std::string stem = fs::path(image_path).stem().string();
    const size_t pos = stem.rfind('_');
    return pos == std::string::npos ? stem : stem.substr(0, pos);
}

namespace {

std::string resolve_against(const fs::path& base_dir, const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q.string() : (base_dir / q).string();
}

} // namespace

FrDataset load_fr_dataset(const fs::path& manifest_path) {
    FrDataset ds;
    ds.name = manifest_path.stem().string();
    ds.rows = read_fr_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    for (auto& row : ds.rows) {
        row.distorted_path = resolve_against(base, row.distorted_path);
        row.reference_path = resolve_against(base, row.reference_path);
    }
    return ds;
}

namespace {

CorrelationReport correlate_scores(const std::vector<double>& quality,
                                   const std::vector<double>& mos,
                                   const std::vector<std::string>& ids) {
    CorrelationReport rep;
    rep.n = static_cast<int>(quality.size());
    rep.srcc = srcc(quality, mos);
    if (quality.size() >= 4) {
        std::vector<ScoreRecord> recs;
        recs.reserve(quality.size());
        for (size_t i = 0; i < quality.size(); ++i)
            recs.push_back({ids[i], quality[i], mos[i]});
        rep.plcc = plcc(quality, mos, fit_logistic(recs));
    } else {
        rep.plcc = plcc(quality, mos); // too few points to fit a calibration
    }
    return rep;
}

} // namespace

FrBenchmarkReport run_fr_benchmark(const perceptual::PerceptualMetric& metric,
                                   const std::vector<FrDataset>& datasets) {
    if (datasets.empty()) throw DomainError("benchmark needs at least one dataset");
    FrBenchmarkReport out;
    double srcc_sum = 0.0, plcc_sum = 0.0;
    int total = 0;
    for (const auto& ds : datasets) {
        const int64_t n = static_cast<int64_t>(ds.rows.size());
        if (n < 3)
            throw DomainError("dataset '" + ds.name + "' needs at least 3 items");
        std::vector<double> quality(static_cast<size_t>(n));
        std::vector<std::string> io_failures(static_cast<size_t>(n));
        std::vector<std::exception_ptr> other(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
        for (int64_t i = 0; i < n; ++i) {
            const auto& row = ds.rows[static_cast<size_t>(i)];
            try {
                PairedSample pair(read_png(row.distorted_path),
                                  read_png(row.reference_path));
                quality[static_cast<size_t>(i)] =
                    -perceptual::perceptual_distance(metric, pair);
            } catch (const IoError& e) {
                io_failures[static_cast<size_t>(i)] = e.what();
            } catch (...) {
                other[static_cast<size_t>(i)] = std::current_exception();
            }
        }
        std::string io_report;
        for (const auto& msg : io_failures)
            if (!msg.empty()) io_report += "\n  " + msg;
        if (!io_report.empty())
            throw IoError("dataset '" + ds.name + "' has unreadable items:" + io_report);
        for (const auto& ep : other)
            if (ep) std::rethrow_exception(ep);

        std::vector<double> mos;
        std::vector<std::string> ids;
        mos.reserve(ds.rows.size());
        for (const auto& row : ds.rows) {
            mos.push_back(row.mos);
            ids.push_back(row.distorted_path);
        }
        const CorrelationReport rep = correlate_scores(quality, mos, ids);
        out.per_dataset.push_back({ds.name, rep});
        srcc_sum += rep.srcc;
        plcc_sum += rep.plcc;
        total += rep.n;
    }
    out.macro.srcc = srcc_sum / static_cast<double>(datasets.size());
    out.macro.plcc = plcc_sum / static_cast<double>(datasets.size());
    out.macro.n = total;
    return out;
}

InitMode parse_init_mode(const std::string& name) {
    if (name == "random") return InitMode::Random;
    if (name == "gan") return InitMode::Gan;
    if (name == "imagenet-file") return InitMode::ImagenetFile;
    throw ConfigError("unknown init mode '" + name +
                      "' (expected random, gan, or imagenet-file)");
}

std::string init_mode_to_string(InitMode mode) {
    switch (mode) {
    case InitMode::Random: return "random";
    case InitMode::Gan: return "gan";
    case InitMode::ImagenetFile: return "imagenet-file";
    }
    throw ConfigError("invalid init mode");
}

IqaTask parse_iqa_task(const std::string& name) {
    if (name == "fr") return IqaTask::Fr;
    if (name == "nr") return IqaTask::Nr;
    throw ConfigError("unknown IQA task '" + name + "' (expected fr or nr)");
}

std::string iqa_task_to_string(IqaTask task) {
    return task == IqaTask::Fr ? "fr" : "nr";
}

namespace {

// backbone spec + optional weight container for the chosen initialization
struct ResolvedInit {
    backbones::BackboneSpec spec;
    std::optional<nn::WeightFile> weights; // gan mode
};

ResolvedInit resolve_init(const TransferConfig& cfg) {
    ResolvedInit r;
    r.spec = backbones::BackboneRegistry::instance().get(cfg.backbone_name);
    switch (cfg.init.mode) {
    case InitMode::Random:
        r.spec.weight_source = backbones::WeightSource::BuiltinRandomFixed;
        r.spec.init_seed = derive_seed(cfg.seed, "transfer.random-init");
        break;
    case InitMode::Gan:
        if (!fs::exists(cfg.init.disc_weights_path) ||
            !fs::exists(cfg.init.disc_sidecar_path))
            throw ConfigError("gan init needs an existing discriminator checkpoint (" +
                              cfg.init.disc_weights_path + ", " +
                              cfg.init.disc_sidecar_path + ")");
        r.weights = adversarial::extract_disc_backbone(cfg.init.disc_weights_path,
                                                       cfg.init.disc_sidecar_path);
        break;
    case InitMode::ImagenetFile:
        r.spec.weight_source = backbones::WeightSource::File;
        r.spec.weight_path = cfg.init.weight_file_path;
        break;
    }
    return r;
}

CorrelationReport run_fr_transfer(const TransferConfig& cfg,
                                  const fs::path& manifest_path) {
    std::vector<FrManifestRow> rows = read_fr_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    for (auto& row : rows) {
        row.distorted_path = resolve_against(base, row.distorted_path);
        row.reference_path = resolve_against(base, row.reference_path);
    }
    std::vector<std::string> keys;
    keys.reserve(rows.size());
    for (const auto& row : rows) keys.push_back(row.reference_path);
    const SplitIndices split = split_by_content(keys, cfg.split);
    if (split.train.empty()) throw DomainError("train split is empty");
    if (split.test.size() < 3) throw DomainError("test split needs at least 3 items");

    ResolvedInit init = resolve_init(cfg);
    perceptual::PerceptualMetric metric = perceptual::make_metric(init.spec);
    if (init.weights) metric.backbone->load_weights(*init.weights, "");

    std::vector<std::pair<PairedSample, double>> train_set;
    train_set.reserve(split.train.size());
    for (int i : split.train) {
        const auto& row = rows[static_cast<size_t>(i)];
        train_set.emplace_back(
            PairedSample(read_png(row.distorted_path), read_png(row.reference_path)),
            row.mos);
    }
    perceptual::MetricTrainResult trained =
        perceptual::train_metric(std::move(metric), train_set, cfg.metric_cfg);

    std::vector<double> quality, mos;
    std::vector<std::string> ids;
    for (int i : split.test) {
        const auto& row = rows[static_cast<size_t>(i)];
        PairedSample pair(read_png(row.distorted_path), read_png(row.reference_path));
        quality.push_back(-perceptual::perceptual_distance(trained.metric, pair));
        mos.push_back(row.mos);
        ids.push_back(row.distorted_path);
    }
    return correlate_scores(quality, mos, ids);
}

CorrelationReport run_nr_transfer(const TransferConfig& cfg,
                                  const fs::path& manifest_path) {
    std::vector<NrManifestRow> rows = read_nr_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    for (auto& row : rows) row.image_path = resolve_against(base, row.image_path);

    std::vector<std::string> keys;
    keys.reserve(rows.size());
    for (const auto& row : rows) keys.push_back(content_key(row.image_path));
    const SplitIndices split = split_by_content(keys, cfg.split);
    if (split.train.empty()) throw DomainError("train split is empty");
    if (split.test.size() < 3) throw DomainError("test split needs at least 3 items");

    ResolvedInit init = resolve_init(cfg);
    init.spec.frozen = false; // NR trains the backbone end to end
    backbones::Backbone backbone(init.spec);
    if (init.weights) backbone.load_weights(*init.weights, "");

    const int top_channels = init.spec.stage_layout.back().channels;
    Rng head_rng(derive_seed(cfg.seed, "nr.head"));
    Tensor head_w({top_channels});
    const double head_std = std::sqrt(1.0 / top_channels);
    for (int64_t i = 0; i < head_w.numel(); ++i)
        head_w[i] = head_rng.truncated_normal(head_std);
    nn::Var w = nn::parameter(std::move(head_w), "nr.head.w");
    nn::Var b = nn::parameter(Tensor::zeros({1}), "nr.head.b");

    std::vector<nn::Var> params = backbone.params();
    params.push_back(w);
    params.push_back(b);
    nn::Adam opt(params, {});

    // regression targets: train-split MOS min-max normalized to [0, 1]
    double mos_lo = rows[static_cast<size_t>(split.train.front())].mos;
    double mos_hi = mos_lo;
    for (int i : split.train) {
        mos_lo = std::min(mos_lo, rows[static_cast<size_t>(i)].mos);
        mos_hi = std::max(mos_hi, rows[static_cast<size_t>(i)].mos);
    }
    if (!(mos_hi > mos_lo))
        throw DomainError("NR training needs non-constant MOS in the train split");

    std::vector<ImageTensor> train_images;
    std::vector<double> train_targets;
    train_images.reserve(split.train.size());
    for (int i : split.train) {
        const auto& row = rows[static_cast<size_t>(i)];
        train_images.push_back(read_png(row.image_path));
        train_targets.push_back((row.mos - mos_lo) / (mos_hi - mos_lo));
    }

    const NrTrainConfig& nr = cfg.nr_cfg;
    if (nr.total_iters <= 0 || nr.batch_size <= 0 || !(nr.initial_lr > 0.0) ||
        nr.halve_every <= 0)
        throw ConfigError("NR training config needs positive iters, batch, lr, and halving period");
    const std::vector<int> decay = nn::decay_every(nr.total_iters, nr.halve_every);
    const int train_n = static_cast<int>(train_images.size());

    auto predict = [&](const ImageTensor& img) {
        const std::vector<nn::Var> stages =
            backbone.forward_graph(nn::constant(img.tensor()));
        return nn::dot_bias(nn::global_avg_pool(stages.back()), w, b);
    };

    for (int iter = 1; iter <= nr.total_iters; ++iter) {
        const double lr = nn::lr_at(nr.initial_lr, decay, iter);
        Rng batch_rng(derive_seed(cfg.seed, "nr.iter" + std::to_string(iter)));
        std::vector<nn::Var> terms;
        terms.reserve(static_cast<size_t>(nr.batch_size));
        for (int s = 0; s < nr.batch_size; ++s) {
            const int j = batch_rng.uniform_int(train_n);
            terms.push_back(nn::square(nn::add_scalar(
                predict(train_images[static_cast<size_t>(j)]),
                -train_targets[static_cast<size_t>(j)])));
        }
        nn::Var loss = nn::stack_mean(terms);
        if (!std::isfinite(loss->value[0]))
            throw DivergenceError("NR training loss became non-finite at iteration " +
                                  std::to_string(iter));
        nn::backward(loss);
        opt.step(lr);
        opt.zero_grad();
    }

    std::vector<double> preds, mos;
    std::vector<std::string> ids;
    for (int i : split.test) {
        const auto& row = rows[static_cast<size_t>(i)];
        preds.push_back(predict(read_png(row.image_path))->value[0]);
        mos.push_back(row.mos);
        ids.push_back(row.image_path);
    }
    return correlate_scores(preds, mos, ids);
}

} // namespace

CorrelationReport run_transfer_experiment(const TransferConfig& cfg,
                                          const fs::path& manifest_path) {
    return cfg.task == IqaTask::Fr ? run_fr_transfer(cfg, manifest_path)
                                   : run_nr_transfer(cfg, manifest_path);
}

// ---- report emission -------------------------------------------------------

namespace {

constexpr double kSvgW = 640.0, kSvgH = 480.0;
constexpr double kMarginL = 70.0, kMarginR = 20.0, kMarginT = 30.0, kMarginB = 50.0;

const char* series_color(size_t i) {
    static const char* palette[] = {"#4063d8", "#cb3c33", "#389826",
                                    "#9558b2", "#e69f00", "#56b4e9"};
    return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

struct Canvas {
    std::ostringstream ss;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

    void set_range(double x0, double x1, double y0, double y1) {
        if (!(x1 > x0)) {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if (!(y1 > y0)) {
            y0 -= 0.5;
            y1 += 0.5;
        }
        xmin = x0;
        xmax = x1;
        ymin = y0;
        ymax = y1;
    }
    double px(double x) const {
        return kMarginL + (x - xmin) / (xmax - xmin) * (kSvgW - kMarginL - kMarginR);
    }
    double py(double y) const {
        return kSvgH - kMarginB -
               (y - ymin) / (ymax - ymin) * (kSvgH - kMarginT - kMarginB);
    }

    void open(const std::string& title) {
        ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgW
           << "\" height=\"" << kSvgH << "\" viewBox=\"0 0 " << kSvgW << ' ' << kSvgH
           << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
           << "<text x=\"" << kSvgW / 2
           << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
              "font-size=\"14\">"
           << title << "</text>\n";
    }
    void axes(const std::string& xlabel, const std::string& ylabel,
              bool numeric_x = true) {
        ss << "<line x1=\"" << fmt2(kMarginL) << "\" y1=\"" << fmt2(kSvgH - kMarginB)
           << "\" x2=\"" << fmt2(kSvgW - kMarginR) << "\" y2=\""
           << fmt2(kSvgH - kMarginB) << "\" stroke=\"black\"/>\n"
           << "<line x1=\"" << fmt2(kMarginL) << "\" y1=\"" << fmt2(kMarginT)
           << "\" x2=\"" << fmt2(kMarginL) << "\" y2=\"" << fmt2(kSvgH - kMarginB)
           << "\" stroke=\"black\"/>\n";
        if (numeric_x) {
            ss << "<text x=\"" << fmt2(kMarginL) << "\" y=\"" << fmt2(kSvgH - kMarginB + 18)
               << "\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"middle\">"
               << fmt4(xmin) << "</text>\n<text x=\"" << fmt2(kSvgW - kMarginR)
               << "\" y=\"" << fmt2(kSvgH - kMarginB + 18)
               << "\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"middle\">"
               << fmt4(xmax) << "</text>\n";
        }
        ss << "<text x=\"" << fmt2(kMarginL - 8) << "\" y=\"" << fmt2(kSvgH - kMarginB)
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
           << fmt4(ymin) << "</text>\n<text x=\"" << fmt2(kMarginL - 8) << "\" y=\""
           << fmt2(kMarginT + 10)
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
           << fmt4(ymax) << "</text>\n"
           << "<text x=\"" << fmt2((kMarginL + kSvgW - kMarginR) / 2) << "\" y=\""
           << fmt2(kSvgH - 12)
           << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">"
           << xlabel << "</text>\n"
           << "<text x=\"16\" y=\"" << fmt2((kMarginT + kSvgH - kMarginB) / 2)
           << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" "
              "transform=\"rotate(-90 16 "
           << fmt2((kMarginT + kSvgH - kMarginB) / 2) << ")\">" << ylabel
           << "</text>\n";
    }
    void close() { ss << "</svg>\n"; }
};

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write report file: " + path.string());
    os << content;
    if (!os) throw IoError("write failed: " + path.string());
}

std::string report_row(const CorrelationReport& r) {
    return format_double(r.srcc) + ',' + format_double(r.plcc) + ',' +
           std::to_string(r.n);
}

void emit_fr_section(const ReportBundle& bundle, const fs::path& out_dir) {
    const auto& rows = bundle.fr_rows;
    for (const auto& row : rows) {
        if (row.per_dataset.size() != rows.front().per_dataset.size())
            throw DomainError("FR rows must share one dataset sequence");
        for (size_t d = 0; d < row.per_dataset.size(); ++d)
            if (row.per_dataset[d].dataset != rows.front().per_dataset[d].dataset)
                throw DomainError("FR rows must share one dataset sequence");
    }
    std::string csv = "label";
    for (const auto& nr : rows.front().per_dataset)
        csv += ',' + nr.dataset + "_srcc," + nr.dataset + "_plcc";
    csv += ",avg_srcc,avg_plcc,n\n";
    for (const auto& row : rows) {
        csv += row.label;
        for (const auto& nr : row.per_dataset)
            csv += ',' + format_double(nr.report.srcc) + ',' +
                   format_double(nr.report.plcc);
        csv += ',' + report_row(row.average) + '\n';
    }
    write_text_file(out_dir / "fr_correlations.csv", csv);

    Canvas c;
    double lo = 0.0, hi = 0.0;
    for (const auto& row : rows) {
        lo = std::min(lo, row.average.srcc);
        hi = std::max(hi, row.average.srcc);
    }
    c.set_range(0.0, static_cast<double>(rows.size()), lo, hi);
    c.open("Average SRCC per metric");
    c.axes("metric", "SRCC", false);
    for (size_t i = 0; i < rows.size(); ++i) {
        const double x0 = c.px(static_cast<double>(i) + 0.15);
        const double x1 = c.px(static_cast<double>(i) + 0.85);
        const double y0 = c.py(std::max(0.0, rows[i].average.srcc));
        const double yb = c.py(std::min(0.0, rows[i].average.srcc));
        c.ss << "<rect x=\"" << fmt2(x0) << "\" y=\"" << fmt2(y0) << "\" width=\""
             << fmt2(x1 - x0) << "\" height=\"" << fmt2(yb - y0) << "\" fill=\""
             << series_color(i) << "\"/>\n<text x=\"" << fmt2((x0 + x1) / 2)
             << "\" y=\"" << fmt2(kSvgH - kMarginB + 18)
             << "\" font-family=\"sans-serif\" font-size=\"10\" "
                "text-anchor=\"middle\">"
             << rows[i].label << "</text>\n";
    }
    c.close();
    write_text_file(out_dir / "fr_srcc_bars.svg", c.ss.str());
}

void emit_transfer_section(const ReportBundle& bundle, const fs::path& out_dir) {
    const auto& rows = bundle.transfer_rows;
    std::string csv = "backbone,init,srcc,plcc,n\n";
    for (const auto& row : rows)
        csv += row.backbone + ',' + row.init + ',' + report_row(row.report) + '\n';
    write_text_file(out_dir / "transfer.csv", csv);

    // grouped bars: one group per backbone, one bar per init mode
    std::vector<std::string> backbones, inits;
    for (const auto& row : rows) {
        if (std::find(backbones.begin(), backbones.end(), row.backbone) ==
            backbones.end())
            backbones.push_back(row.backbone);
        if (std::find(inits.begin(), inits.end(), row.init) == inits.end())
            inits.push_back(row.init);
    }
    Canvas c;
    double lo = 0.0, hi = 0.0;
    for (const auto& row : rows) {
        lo = std::min(lo, row.report.srcc);
        hi = std::max(hi, row.report.srcc);
    }
    c.set_range(0.0, static_cast<double>(backbones.size()), lo, hi);
    c.open("Transfer SRCC by initialization");
    c.axes("backbone", "SRCC", false);
    const double group_w = 0.8 / static_cast<double>(inits.size());
    for (const auto& row : rows) {
        const size_t gi = static_cast<size_t>(
            std::find(backbones.begin(), backbones.end(), row.backbone) -
            backbones.begin());
        const size_t bi = static_cast<size_t>(
            std::find(inits.begin(), inits.end(), row.init) - inits.begin());
        const double x = static_cast<double>(gi) + 0.1 +
                         group_w * static_cast<double>(bi);
        const double x0 = c.px(x), x1 = c.px(x + group_w * 0.9);
        const double y0 = c.py(std::max(0.0, row.report.srcc));
        const double yb = c.py(std::min(0.0, row.report.srcc));
        c.ss << "<rect x=\"" << fmt2(x0) << "\" y=\"" << fmt2(y0) << "\" width=\""
             << fmt2(x1 - x0) << "\" height=\"" << fmt2(yb - y0) << "\" fill=\""
             << series_color(bi) << "\"/>\n";
    }
    for (size_t gi = 0; gi < backbones.size(); ++gi)
        c.ss << "<text x=\"" << fmt2(c.px(static_cast<double>(gi) + 0.5)) << "\" y=\""
             << fmt2(kSvgH - kMarginB + 18)
             << "\" font-family=\"sans-serif\" font-size=\"10\" "
                "text-anchor=\"middle\">"
             << backbones[gi] << "</text>\n";
    for (size_t bi = 0; bi < inits.size(); ++bi)
        c.ss << "<rect x=\"" << fmt2(kSvgW - 150) << "\" y=\""
             << fmt2(kMarginT + 12 * static_cast<double>(bi))
             << "\" width=\"10\" height=\"10\" fill=\"" << series_color(bi)
             << "\"/>\n<text x=\"" << fmt2(kSvgW - 136) << "\" y=\""
             << fmt2(kMarginT + 12 * static_cast<double>(bi) + 9)
             << "\" font-family=\"sans-serif\" font-size=\"10\">" << inits[bi]
             << "</text>\n";
    c.close();
    write_text_file(out_dir / "transfer_bars.svg", c.ss.str());
}

void emit_sweep_section(const ReportBundle& bundle, const fs::path& out_dir) {
    const auto& series = bundle.sweep_series;
    std::string csv = "label,lambda3,score\n";
    for (const auto& s : series)
        for (const auto& [l3, score] : s.points)
            csv += s.label + ',' + format_double(l3) + ',' + format_double(score) + '\n';
    write_text_file(out_dir / "sweep.csv", csv);

    Canvas c;
    bool first = true;
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    for (const auto& s : series)
        for (const auto& [l3, score] : s.points) {
            if (!(l3 > 0.0))
                throw DomainError("sweep lambda3 values must be positive");
            const double lx = std::log10(l3);
            if (first) {
                x0 = x1 = lx;
                y0 = y1 = score;
                first = false;
            } else {
                x0 = std::min(x0, lx);
                x1 = std::max(x1, lx);
                y0 = std::min(y0, score);
                y1 = std::max(y1, score);
            }
        }
    if (first) throw DomainError("sweep series have no points");
    c.set_range(x0, x1, y0, y1);
    c.open("Quality across the adversarial-weight sweep");
    c.axes("log10(lambda3)", "score");
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        c.ss << "<polyline fill=\"none\" stroke=\"" << series_color(si)
             << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [l3, score] : s.points)
            c.ss << fmt2(c.px(std::log10(l3))) << ',' << fmt2(c.py(score)) << ' ';
        c.ss << "\"/>\n";
        for (const auto& [l3, score] : s.points)
            c.ss << "<circle cx=\"" << fmt2(c.px(std::log10(l3))) << "\" cy=\""
                 << fmt2(c.py(score)) << "\" r=\"3\" fill=\"" << series_color(si)
                 << "\"/>\n";
        c.ss << "<rect x=\"" << fmt2(kSvgW - 170) << "\" y=\""
             << fmt2(kMarginT + 12 * static_cast<double>(si))
             << "\" width=\"10\" height=\"10\" fill=\"" << series_color(si)
             << "\"/>\n<text x=\"" << fmt2(kSvgW - 156) << "\" y=\""
             << fmt2(kMarginT + 12 * static_cast<double>(si) + 9)
             << "\" font-family=\"sans-serif\" font-size=\"10\">" << s.label
             << "</text>\n";
    }
    c.close();
    write_text_file(out_dir / "sweep_lines.svg", c.ss.str());
}

void emit_evaluator_section(const ReportBundle& bundle, const fs::path& out_dir) {
    const auto& rows = bundle.evaluator_rows;
    const auto& first = rows.front().scores;
    for (const auto& row : rows) {
        if (row.scores.size() != first.size())
            throw DomainError("evaluator rows must share one column sequence");
        for (size_t i = 0; i < first.size(); ++i)
            if (row.scores[i].first != first[i].first)
                throw DomainError("evaluator rows must share one column sequence");
    }
    std::string csv = "evaluator";
    for (const auto& [label, _] : first) csv += ',' + label;
    csv += ",std\n";
    std::vector<double> col_sums(first.size(), 0.0);
    for (const auto& row : rows) {
        csv += row.evaluator;
        std::vector<double> vals;
        for (size_t i = 0; i < row.scores.size(); ++i) {
            csv += ',' + format_double(row.scores[i].second);
            vals.push_back(row.scores[i].second);
            col_sums[i] += row.scores[i].second;
        }
        csv += ',' + format_double(population_std(vals)) + '\n';
    }
    std::vector<double> col_means;
    csv += "Average";
    for (double s : col_sums) {
        col_means.push_back(s / static_cast<double>(rows.size()));
        csv += ',' + format_double(col_means.back());
    }
    csv += ',' + format_double(population_std(col_means)) + '\n';
    write_text_file(out_dir / "evaluators.csv", csv);

    Canvas c;
    double lo = 0.0, hi = 0.0;
    for (double m : col_means) {
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    }
    c.set_range(0.0, static_cast<double>(col_means.size()), lo, hi);
    c.open("Average evaluator score per column");
    c.axes("column", "score", false);
    for (size_t i = 0; i < col_means.size(); ++i) {
        const double x0 = c.px(static_cast<double>(i) + 0.15);
        const double x1 = c.px(static_cast<double>(i) + 0.85);
        const double y0 = c.py(std::max(0.0, col_means[i]));
        const double yb = c.py(std::min(0.0, col_means[i]));
        c.ss << "<rect x=\"" << fmt2(x0) << "\" y=\"" << fmt2(y0) << "\" width=\""
             << fmt2(x1 - x0) << "\" height=\"" << fmt2(yb - y0) << "\" fill=\""
             << series_color(i) << "\"/>\n<text x=\"" << fmt2((x0 + x1) / 2)
             << "\" y=\"" << fmt2(kSvgH - kMarginB + 18)
             << "\" font-family=\"sans-serif\" font-size=\"10\" "
                "text-anchor=\"middle\">"
             << first[i].first << "</text>\n";
    }
    c.close();
    write_text_file(out_dir / "evaluator_bars.svg", c.ss.str());
}

void emit_scatter_section(const ReportBundle& bundle, const fs::path& out_dir) {
    const auto& pts = bundle.scatter_points;
    std::string csv = "label,iqa_srcc,quality\n";
    for (const auto& p : pts)
        csv += p.label + ',' + format_double(p.x) + ',' + format_double(p.y) + '\n';
    write_text_file(out_dir / "scatter.csv", csv);

    Canvas c;
    double x0 = pts.front().x, x1 = x0, y0 = pts.front().y, y1 = y0;
    for (const auto& p : pts) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    c.set_range(x0, x1, y0, y1);
    c.open("IQA capability vs. achieved quality");
    c.axes("IQA SRCC", "quality");
    for (size_t i = 0; i < pts.size(); ++i) {
        c.ss << "<circle cx=\"" << fmt2(c.px(pts[i].x)) << "\" cy=\""
             << fmt2(c.py(pts[i].y)) << "\" r=\"4\" fill=\"" << series_color(i)
             << "\"/>\n<text x=\"" << fmt2(c.px(pts[i].x) + 6) << "\" y=\""
             << fmt2(c.py(pts[i].y) - 6)
             << "\" font-family=\"sans-serif\" font-size=\"10\">" << pts[i].label
             << "</text>\n";
    }
    c.close();
    write_text_file(out_dir / "scatter.svg", c.ss.str());
}

} // namespace

void emit_report(const ReportBundle& bundle, const fs::path& out_dir) {
    if (bundle.fr_rows.empty() && bundle.transfer_rows.empty() &&
        bundle.sweep_series.empty() && bundle.evaluator_rows.empty() &&
        bundle.scatter_points.empty())
        throw DomainError("report bundle is empty");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
        throw IoError("cannot create report dir '" + out_dir.string() +
                      "': " + ec.message());
    if (!bundle.fr_rows.empty()) emit_fr_section(bundle, out_dir);
    if (!bundle.transfer_rows.empty()) emit_transfer_section(bundle, out_dir);
    if (!bundle.sweep_series.empty()) emit_sweep_section(bundle, out_dir);
    if (!bundle.evaluator_rows.empty()) emit_evaluator_section(bundle, out_dir);
    if (!bundle.scatter_points.empty()) emit_scatter_section(bundle, out_dir);
}

} // namespace perceptlab::evaluation
