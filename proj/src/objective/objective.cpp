#include "perceptlab/objective/objective.hpp"

#include <cmath>

namespace perceptlab::objective {

SettingName parse_setting(const std::string& name) {
    if (name == "P") return SettingName::P;
    if (name == "RP") return SettingName::RP;
    if (name == "PA") return SettingName::PA;
    if (name == "RPA") return SettingName::RPA;
    throw ConfigError("unknown setting '" + name + "' (expected P, RP, PA, or RPA)");
}

std::string setting_to_string(SettingName name) {
    switch (name) {
        case SettingName::P: return "P";
        case SettingName::RP: return "RP";
        case SettingName::PA: return "PA";
        case SettingName::RPA: return "RPA";
    }
    throw ConfigError("invalid setting value");
}

std::vector<double> lambda3_sweep_grid() { return {1e-3, 5e-3, 2.5e-2, 1.25e-1}; }

SettingLambdas setting_lambdas(SettingName name) {
    switch (name) {
        case SettingName::P: return {0.0, 1.0, 0.0};
        case SettingName::RP: return {1e-2, 1.0, 0.0};
        case SettingName::PA: return {0.0, 1.0, 5e-3};
        case SettingName::RPA: return {1e-2, 1.0, 5e-3};
    }
    throw ConfigError("invalid setting");
}

ObjectiveConfig make_setting(SettingName name,
                             std::shared_ptr<const perceptual::PerceptualMetric> metric,
                             std::shared_ptr<adversarial::Discriminator> disc) {
    if (!metric) throw ConfigError("every setting needs a perceptual metric");
    ObjectiveConfig cfg;
    cfg.metric = std::move(metric);
    const SettingLambdas l = setting_lambdas(name);
    cfg.lambda1 = l.lambda1;
    cfg.lambda2 = l.lambda2;
    cfg.lambda3 = l.lambda3;
    if (cfg.lambda3 > 0.0) {
        if (!disc)
            throw ConfigError("setting " + setting_to_string(name) +
                              " needs a discriminator");
        cfg.discriminator = std::move(disc);
    }
    return cfg;
}

namespace {

void validate(const ObjectiveConfig& cfg,
              const std::optional<adversarial::AdvBatch>& adv_context) {
    if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0 || cfg.lambda3 < 0.0)
        throw ConfigError("objective weights must be >= 0");
    if (!cfg.metric) throw ConfigError("objective needs a perceptual metric");
    if (cfg.lambda3 > 0.0) {
        if (!cfg.discriminator)
            throw ConfigError("lambda3 > 0 requires a discriminator");
        if (!adv_context)
            throw ConfigError("lambda3 > 0 requires an adversarial batch context");
    }
}

double mean_abs_error(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("reconstruction loss needs matching shapes");
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.numel());
}

} // namespace

LossBreakdown composite_loss(const ObjectiveConfig& cfg, const PairedSample& pair,
                             const std::optional<adversarial::AdvBatch>& adv_context) {
    validate(cfg, adv_context);
    LossBreakdown out;
    out.l_rec = mean_abs_error(pair.generated.tensor(), pair.reference.tensor());
    out.l_per = perceptual_distance(*cfg.metric, pair);
    if (cfg.lambda3 > 0.0)
        out.l_adv = adversarial::generator_loss(*adv_context, *cfg.discriminator);
    out.weighted_rec = cfg.lambda1 * out.l_rec;
    out.weighted_per = cfg.lambda2 * out.l_per;
    out.weighted_adv = cfg.lambda3 * out.l_adv;
    out.total = out.weighted_rec + out.weighted_per + out.weighted_adv;
    return out;
}

nn::Var perceptual_distance_graph(const perceptual::PerceptualMetric& metric,
                                  const nn::Var& generated,
                                  const FeaturePyramid& reference_features) {
    const std::vector<nn::Var> stages = metric.backbone->forward_graph(generated);
    if (static_cast<int>(stages.size()) != reference_features.num_stages())
        throw DimensionError("reference features do not match backbone depth");
    std::vector<std::pair<double, nn::Var>> scores;
    for (size_t i = 0; i < stages.size(); ++i)
        scores.push_back({1.0, nn::similarity_stage_score(
                                   stages[i], nn::constant(reference_features.stages[i]),
                                   metric.weights.alpha[i], metric.weights.beta[i],
                                   metric.constants.c1, metric.constants.c2)});
    return nn::add_scalar(nn::neg(nn::weighted_sum(scores)), 1.0);
}

nn::Var non_adversarial_graph(const ObjectiveConfig& cfg,
                              const std::vector<nn::Var>& generated,
                              const std::vector<ImageTensor>& references) {
    if (!cfg.metric) throw ConfigError("objective needs a perceptual metric");
    if (generated.empty() || generated.size() != references.size())
        throw DimensionError("objective batch sides must match and be nonempty");
    std::vector<nn::Var> rec_terms, per_terms;
    for (size_t i = 0; i < generated.size(); ++i) {
        if (cfg.lambda1 > 0.0)
            rec_terms.push_back(
                nn::mean_abs_diff(generated[i], nn::constant(references[i].tensor())));
        if (cfg.lambda2 > 0.0)
            per_terms.push_back(perceptual_distance_graph(
                *cfg.metric, generated[i], cfg.metric->backbone->extract(references[i])));
    }
    std::vector<std::pair<double, nn::Var>> terms;
    if (!rec_terms.empty()) terms.push_back({cfg.lambda1, nn::stack_mean(rec_terms)});
    if (!per_terms.empty()) terms.push_back({cfg.lambda2, nn::stack_mean(per_terms)});
    if (terms.empty()) {
        // all weights zero: a constant-zero scalar keeps callers uniform
        return nn::constant(Tensor::zeros({1}));
    }
    return nn::weighted_sum(terms);
}

std::pair<double, Tensor> composite_image_gradient(
    const ObjectiveConfig& cfg, const PairedSample& pair,
    const std::optional<adversarial::AdvBatch>& adv_context) {
    validate(cfg, adv_context);

    nn::Var img = nn::parameter(pair.generated.tensor(), "objective.image");
    std::vector<std::pair<double, nn::Var>> terms;
    if (cfg.lambda1 > 0.0)
        terms.push_back({cfg.lambda1,
                         nn::mean_abs_diff(img, nn::constant(pair.reference.tensor()))});
    if (cfg.lambda2 > 0.0)
        terms.push_back({cfg.lambda2,
                         perceptual_distance_graph(
                             *cfg.metric, img,
                             cfg.metric->backbone->extract(pair.reference))});
    if (cfg.lambda3 > 0.0) {
        // pair.generated plays adv_context->generated[0]
        std::vector<nn::Var> fake_logits, real_logits;
        fake_logits.push_back(cfg.discriminator->forward_graph(img));
        for (size_t i = 1; i < adv_context->generated.size(); ++i)
            fake_logits.push_back(cfg.discriminator->forward_graph(
                nn::constant(adv_context->generated[i].tensor())));
        for (const auto& y : adv_context->real)
            real_logits.push_back(
                cfg.discriminator->forward_graph(nn::constant(y.tensor())));
        terms.push_back(
            {cfg.lambda3, adversarial::generator_loss_graph(fake_logits, real_logits)});
    }

    nn::Var total = terms.empty() ? nn::constant(Tensor::zeros({1}))
                                  : nn::weighted_sum(terms);
    Tensor grad = Tensor::zeros(pair.generated.tensor().shape());
    if (!terms.empty()) {
        nn::backward(total);
        if (!img->grad.empty()) grad = img->grad;
    }
    return {total->value[0], grad};
}

} // namespace perceptlab::objective
