#include "perceptlab/perceptual/metric.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "perceptlab/nn/adam.hpp"
#include "perceptlab/nn/kernels.hpp"
#include "perceptlab/nn/schedule.hpp"

namespace perceptlab::perceptual {

double texture_similarity(double mean_x, double mean_y, double c1) {
    if (!(c1 > 0.0)) throw DomainError("c1 must be positive");
    return (2.0 * mean_x * mean_y + c1) / (mean_x * mean_x + mean_y * mean_y + c1);
}

double structure_similarity(double var_x, double var_y, double cov_xy, double c2) {
    if (!(c2 > 0.0)) throw DomainError("c2 must be positive");
    return (2.0 * cov_xy + c2) / (var_x + var_y + c2);
}

MetricWeights MetricWeights::uniform(const std::vector<int>& stage_channels) {
    int64_t total = 0;
    for (int c : stage_channels) {
        if (c <= 0) throw DomainError("stage channel counts must be positive");
        total += c;
    }
    if (total == 0) throw DomainError("metric weights need at least one channel");
    const double v = 1.0 / (2.0 * static_cast<double>(total));
    MetricWeights w;
    for (int c : stage_channels) {
        w.alpha.push_back(Tensor::full({c}, v));
        w.beta.push_back(Tensor::full({c}, v));
    }
    return w;
}

MetricWeights MetricWeights::zeros(const std::vector<int>& stage_channels) {
    MetricWeights w;
    for (int c : stage_channels) {
        w.alpha.push_back(Tensor::zeros({c}));
        w.beta.push_back(Tensor::zeros({c}));
    }
    return w;
}

double MetricWeights::sum() const {
    double s = 0.0;
    for (const auto& a : alpha)
        for (int64_t i = 0; i < a.numel(); ++i) s += a[i];
    for (const auto& b : beta)
        for (int64_t i = 0; i < b.numel(); ++i) s += b[i];
    return s;
}

std::vector<int> MetricWeights::stage_channels() const {
    std::vector<int> out;
    for (const auto& a : alpha) out.push_back(static_cast<int>(a.numel()));
    return out;
}

bool MetricWeights::same_shape(const MetricWeights& o) const {
    if (alpha.size() != o.alpha.size() || beta.size() != o.beta.size()) return false;
    for (size_t i = 0; i < alpha.size(); ++i)
        if (!alpha[i].same_shape(o.alpha[i]) || !beta[i].same_shape(o.beta[i]))
            return false;
    return true;
}

MetricWeights project_weights(MetricWeights w) {
    if (w.alpha.empty() || w.alpha.size() != w.beta.size())
        throw DomainError("malformed metric weights");
    for (int round = 0; round < 1000; ++round) {
        bool clamped = false;
        auto clamp_stage = [&](Tensor& t, bool stage0) {
            for (int64_t i = 0; i < t.numel(); ++i) {
                double v = t[i];
                const double lo = stage0 ? 0.02 : 0.0;
                if (v < lo) v = lo;
                if (stage0 && v > 1.0) v = 1.0;
                if (v != t[i]) {
                    t[i] = v;
                    clamped = true;
                }
            }
        };
        for (size_t i = 0; i < w.alpha.size(); ++i) {
            clamp_stage(w.alpha[i], i == 0);
            clamp_stage(w.beta[i], i == 0);
        }
        const double s = w.sum();
        if (!(s > 0.0) || !std::isfinite(s))
            throw DegenerateWeightsError("metric weights degenerate after clamping");
        if (std::abs(s - 1.0) <= 1e-14 && !clamped) return w;
        if (std::abs(s - 1.0) > 1e-14) {
            for (auto& a : w.alpha)
                for (int64_t i = 0; i < a.numel(); ++i) a[i] /= s;
            for (auto& b : w.beta)
                for (int64_t i = 0; i < b.numel(); ++i) b[i] /= s;
        }
    }
    throw DegenerateWeightsError("weight projection did not reach a fixed point");
}

PerceptualMetric make_metric(const backbones::BackboneSpec& spec,
                             StabilityConstants constants) {
    if (!(constants.c1 > 0.0) || !(constants.c2 > 0.0))
        throw DomainError("stability constants must be strictly positive");
    backbones::BackboneSpec frozen = spec;
    frozen.frozen = true;
    PerceptualMetric m;
    m.backbone = std::make_shared<backbones::Backbone>(frozen);
    std::vector<int> channels{3};
    for (const auto& st : frozen.stage_layout) channels.push_back(st.channels);
    m.weights = MetricWeights::uniform(channels);
    m.constants = constants;
    return m;
}

SimilarityTables similarity_tables(const PerceptualMetric& metric,
                                   const PairedSample& pair) {
    const FeaturePyramid px = metric.backbone->extract(pair.generated);
    const FeaturePyramid py = metric.backbone->extract(pair.reference);
    SimilarityTables t;
    for (int i = 0; i < px.num_stages(); ++i) {
        const Tensor& sx = px.stages[static_cast<size_t>(i)];
        const Tensor& sy = py.stages[static_cast<size_t>(i)];
        const int c = sx.dim(0);
        std::vector<double> mx(c), my(c), vx(c), vy(c), cov(c);
        kernels::stage_pair_stats(sx, sy, mx.data(), my.data(), vx.data(), vy.data(),
                                  cov.data());
        Tensor l({c}), s({c});
        for (int j = 0; j < c; ++j) {
            l[j] = texture_similarity(mx[j], my[j], metric.constants.c1);
            s[j] = structure_similarity(vx[j], vy[j], cov[j], metric.constants.c2);
        }
        t.l.push_back(std::move(l));
        t.s.push_back(std::move(s));
    }
    return t;
}

double distance_from_tables(const MetricWeights& w, const SimilarityTables& t) {
    if (w.alpha.size() != t.l.size())
        throw DimensionError("metric weights do not match feature pyramid depth");
    double acc = 0.0;
    for (size_t i = 0; i < w.alpha.size(); ++i) {
        if (w.alpha[i].numel() != t.l[i].numel())
            throw DimensionError("metric weights do not match stage " +
                                 std::to_string(i) + " channel count");
        for (int64_t j = 0; j < w.alpha[i].numel(); ++j)
            acc += w.alpha[i][j] * t.l[i][j] + w.beta[i][j] * t.s[i][j];
    }
    return 1.0 - acc;
}

double perceptual_distance(const PerceptualMetric& metric, const PairedSample& pair) {
    return distance_from_tables(metric.weights, similarity_tables(metric, pair));
}

MetricWeights weight_gradients(const PerceptualMetric& metric, const PairedSample& pair) {
    const SimilarityTables t = similarity_tables(metric, pair);
    MetricWeights g = MetricWeights::zeros(metric.weights.stage_channels());
    for (size_t i = 0; i < g.alpha.size(); ++i)
        for (int64_t j = 0; j < g.alpha[i].numel(); ++j) {
            g.alpha[i][j] = -t.l[i][j];
            g.beta[i][j] = -t.s[i][j];
        }
    return g;
}

namespace {

// flattened view helpers for the training loop
struct FlatWeights {
    std::vector<nn::Var> vars; // alpha stages then beta stages

    explicit FlatWeights(const MetricWeights& w) {
        for (size_t i = 0; i < w.alpha.size(); ++i)
            vars.push_back(nn::parameter(w.alpha[i], "metric.alpha" + std::to_string(i)));
        for (size_t i = 0; i < w.beta.size(); ++i)
            vars.push_back(nn::parameter(w.beta[i], "metric.beta" + std::to_string(i)));
    }

    MetricWeights to_weights() const {
        MetricWeights w;
        const size_t m = vars.size() / 2;
        for (size_t i = 0; i < m; ++i) w.alpha.push_back(vars[i]->value);
        for (size_t i = 0; i < m; ++i) w.beta.push_back(vars[m + i]->value);
        return w;
    }

    void assign(const MetricWeights& w) {
        const size_t m = vars.size() / 2;
        for (size_t i = 0; i < m; ++i) vars[i]->value = w.alpha[i];
        for (size_t i = 0; i < m; ++i) vars[m + i]->value = w.beta[i];
    }
};

} // namespace

MetricTrainResult train_metric(PerceptualMetric metric,
                               const std::vector<std::pair<PairedSample, double>>& dataset,
                               const MetricTrainConfig& cfg) {
    if (dataset.empty()) throw DomainError("metric training needs a nonempty dataset");
    if (!metric.backbone->spec().frozen)
        throw ConfigError("metric backbone must be frozen during training");
    if (cfg.total_iters <= 0 || cfg.batch_size <= 0)
        throw ConfigError("metric schedule must have positive iterations and batch");

    // features never move (frozen backbone), so cache per-item l/s once
    std::vector<SimilarityTables> tables;
    tables.reserve(dataset.size());
    for (const auto& [pair, mos] : dataset) tables.push_back(similarity_tables(metric, pair));

    double mos_lo = dataset[0].second, mos_hi = dataset[0].second;
    for (const auto& [pair, mos] : dataset) {
        mos_lo = std::min(mos_lo, mos);
        mos_hi = std::max(mos_hi, mos);
    }
    const double mos_span = mos_hi - mos_lo;

    // ordered (better, worse) index pairs under normalized MOS
    std::vector<std::pair<int, int>> ranked;
    for (size_t a = 0; a < dataset.size(); ++a)
        for (size_t b = 0; b < dataset.size(); ++b) {
            if (a == b) continue;
            if (mos_span <= 0.0) continue;
            const double na = (dataset[a].second - mos_lo) / mos_span;
            const double nb = (dataset[b].second - mos_lo) / mos_span;
            if (na > nb) ranked.emplace_back(static_cast<int>(a), static_cast<int>(b));
        }
    if (ranked.empty())
        throw DomainError("metric training needs at least two distinct MOS values");

    const std::vector<int> channels = metric.weights.stage_channels();
    FlatWeights flat(metric.weights);
    nn::Adam adam(flat.vars, {});
    Rng rng(derive_seed(cfg.seed, "metric.pairs"));
    const std::vector<int> decay = nn::decay_every(cfg.total_iters, cfg.halve_every);

    MetricTrainResult result;
    result.metric = std::move(metric);
    const size_t m = channels.size();

    for (int iter = 1; iter <= cfg.total_iters; ++iter) {
        const double lr = nn::lr_at(cfg.initial_lr, decay, iter);
        const MetricWeights cur = flat.to_weights();

        double objective = 0.0;
        MetricWeights grad = MetricWeights::zeros(channels);
        for (int k = 0; k < cfg.batch_size; ++k) {
            const auto& [better, worse] =
                ranked[static_cast<size_t>(rng.uniform_int(static_cast<int>(ranked.size())))];
            const double db = distance_from_tables(cur, tables[static_cast<size_t>(better)]);
            const double dw = distance_from_tables(cur, tables[static_cast<size_t>(worse)]);
            const double hinge = db - dw + cfg.margin;
            if (hinge > 0.0) {
                objective += hinge;
                // d(db - dw)/d alpha_ij = -l_better + l_worse
                for (size_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < grad.alpha[i].numel(); ++j) {
                        grad.alpha[i][j] +=
                            tables[static_cast<size_t>(worse)].l[i][j] -
                            tables[static_cast<size_t>(better)].l[i][j];
                        grad.beta[i][j] +=
                            tables[static_cast<size_t>(worse)].s[i][j] -
                            tables[static_cast<size_t>(better)].s[i][j];
                    }
            }
        }
        objective /= cfg.batch_size;
        if (!std::isfinite(objective))
            throw DivergenceError("metric training objective became non-finite at iteration " +
                                  std::to_string(iter));

        for (size_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < grad.alpha[i].numel(); ++j)
                grad.alpha[i][j] /= cfg.batch_size;
            for (int64_t j = 0; j < grad.beta[i].numel(); ++j)
                grad.beta[i][j] /= cfg.batch_size;
            flat.vars[i]->grad = grad.alpha[i];
            flat.vars[m + i]->grad = grad.beta[i];
        }
        adam.step(lr);
        adam.zero_grad();

        MetricWeights projected = project_weights(flat.to_weights());
        flat.assign(projected);

        MetricTrainLogRow row;
        row.iter = iter;
        row.lr = lr;
        row.objective = objective;
        row.constraint_residual = std::abs(projected.sum() - 1.0);
        result.log.push_back(row);
    }

    result.metric.weights = flat.to_weights();
    return result;
}

void save_metric(const PerceptualMetric& metric, const MetricTrainConfig& schedule,
                 const std::string& weights_path, const std::string& sidecar_path) {
    nn::WeightFile wf;
    metric.backbone->save_weights(wf, "backbone.");
    for (size_t i = 0; i < metric.weights.alpha.size(); ++i) {
        wf.put("alpha" + std::to_string(i), metric.weights.alpha[i]);
        wf.put("beta" + std::to_string(i), metric.weights.beta[i]);
    }
    wf.save(weights_path);

    nlohmann::json j;
    j["backbone"]["name"] = metric.backbone->spec().name;
    j["backbone"]["min_input"] = metric.backbone->spec().min_input;
    auto layout = nlohmann::json::array();
    for (const auto& st : metric.backbone->spec().stage_layout)
        layout.push_back({st.channels, st.downsample});
    j["backbone"]["stage_layout"] = layout;
    j["constants"]["c1"] = metric.constants.c1;
    j["constants"]["c2"] = metric.constants.c2;
    j["schedule"]["total_iters"] = schedule.total_iters;
    j["schedule"]["initial_lr"] = schedule.initial_lr;
    j["schedule"]["halve_every"] = schedule.halve_every;
    j["schedule"]["batch_size"] = schedule.batch_size;
    j["schedule"]["margin"] = schedule.margin;

    std::ofstream os(sidecar_path);
    if (!os) throw IoError("cannot write metric sidecar: " + sidecar_path);
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write failed: " + sidecar_path);
}

PerceptualMetric load_metric(const std::string& weights_path,
                             const std::string& sidecar_path) {
    std::ifstream is(sidecar_path);
    if (!is) throw IoError("cannot read metric sidecar: " + sidecar_path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("metric sidecar is not valid JSON: " + std::string(e.what()));
    }

    backbones::BackboneSpec spec;
    try {
        spec.name = j.at("backbone").at("name").get<std::string>();
        spec.min_input = j.at("backbone").at("min_input").get<int>();
        for (const auto& st : j.at("backbone").at("stage_layout"))
            spec.stage_layout.push_back({st.at(0).get<int>(), st.at(1).get<int>()});
    } catch (const nlohmann::json::exception& e) {
        throw IoError("metric sidecar missing backbone fields: " + std::string(e.what()));
    }
    spec.weight_source = backbones::WeightSource::BuiltinTiny;
    spec.frozen = true;

    PerceptualMetric m;
    m.backbone = std::make_shared<backbones::Backbone>(spec);
    const nn::WeightFile wf = nn::WeightFile::load(weights_path);
    m.backbone->load_weights(wf, "backbone.");

    m.constants.c1 = j.at("constants").at("c1").get<double>();
    m.constants.c2 = j.at("constants").at("c2").get<double>();
    if (!(m.constants.c1 > 0.0) || !(m.constants.c2 > 0.0))
        throw IoError("metric sidecar has non-positive stability constants");

    for (size_t i = 0; i <= spec.stage_layout.size(); ++i) {
        m.weights.alpha.push_back(wf.get("alpha" + std::to_string(i)));
        m.weights.beta.push_back(wf.get("beta" + std::to_string(i)));
    }
    return m;
}

} // namespace perceptlab::perceptual
