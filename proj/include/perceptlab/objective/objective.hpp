#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "perceptlab/adversarial/adversarial.hpp"
#include "perceptlab/perceptual/metric.hpp"

namespace perceptlab::objective {

// the paper's four second-stage settings
enum class SettingName { P, RP, PA, RPA };

SettingName parse_setting(const std::string& name); // ConfigError on unknown
std::string setting_to_string(SettingName name);

// adversarial-weight grid for the stability sweep
std::vector<double> lambda3_sweep_grid(); // {1e-3, 5e-3, 2.5e-2, 1.25e-1}

struct SettingLambdas {
    double lambda1 = 0.0;
    double lambda2 = 1.0;
    double lambda3 = 0.0;
};

SettingLambdas setting_lambdas(SettingName name);

struct ObjectiveConfig {
    double lambda1 = 0.0; // reconstruction
    double lambda2 = 1.0; // perceptual
    double lambda3 = 0.0; // adversarial
    std::shared_ptr<const perceptual::PerceptualMetric> metric;
    std::shared_ptr<adversarial::Discriminator> discriminator; // needed iff lambda3 > 0
};

ObjectiveConfig make_setting(SettingName name,
                             std::shared_ptr<const perceptual::PerceptualMetric> metric,
                             std::shared_ptr<adversarial::Discriminator> disc = nullptr);

struct LossBreakdown {
    double l_rec = 0.0;
    double l_per = 0.0;
    double l_adv = 0.0;
    double weighted_rec = 0.0;
    double weighted_per = 0.0;
    double weighted_adv = 0.0;
    double total = 0.0;
};

// l = lambda1*l_rec + lambda2*l_per + lambda3*l_adv with l_rec = mean
// absolute error. adv_context is required exactly when lambda3 > 0.
LossBreakdown composite_loss(const ObjectiveConfig& cfg, const PairedSample& pair,
                             const std::optional<adversarial::AdvBatch>& adv_context);

// graph form of the perceptual distance for one generated image against
// precomputed reference features (frozen backbone)
nn::Var perceptual_distance_graph(const perceptual::PerceptualMetric& metric,
                                  const nn::Var& generated,
                                  const FeaturePyramid& reference_features);

// lambda1 * mean l1 + lambda2 * mean perceptual over a batch of generated
// graph nodes and their references; the adversarial term is added by the
// caller (see adversarial::alternating_step)
nn::Var non_adversarial_graph(const ObjectiveConfig& cfg,
                              const std::vector<nn::Var>& generated,
                              const std::vector<ImageTensor>& references);

// composite value and its gradient w.r.t. pair.generated, for derivative
// verification. When lambda3 > 0, pair.generated stands in for
// adv_context->generated[0]; gradients flow through both Eq. 6 terms.
std::pair<double, Tensor> composite_image_gradient(
    const ObjectiveConfig& cfg, const PairedSample& pair,
    const std::optional<adversarial::AdvBatch>& adv_context);

} // namespace perceptlab::objective
