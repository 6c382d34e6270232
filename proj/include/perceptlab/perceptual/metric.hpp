#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "perceptlab/backbones/backbone.hpp"
#include "perceptlab/core/types.hpp"

namespace perceptlab::perceptual {

struct StabilityConstants {
    double c1 = 1e-6;
    double c2 = 1e-6;
};

// Eq. 2 scalar forms
double texture_similarity(double mean_x, double mean_y, double c1);
double structure_similarity(double var_x, double var_y, double cov_xy, double c2);

// Learnable per-(stage, channel) coefficients of the weighted metric. Stage 0
// covers the raw image channels.
struct MetricWeights {
    std::vector<Tensor> alpha; // alpha[i] has shape (n_i)
    std::vector<Tensor> beta;

    static MetricWeights uniform(const std::vector<int>& stage_channels);
    static MetricWeights zeros(const std::vector<int>& stage_channels);

    int num_stages() const { return static_cast<int>(alpha.size()); }
    double sum() const;
    std::vector<int> stage_channels() const;
    bool same_shape(const MetricWeights& o) const;
};

// clamp stage 0 to [0.02, 1] and the rest to >= 0, renormalize to sum 1, and
// repeat to a fixed point so the result is exactly idempotent
MetricWeights project_weights(MetricWeights w);

struct PerceptualMetric {
    std::shared_ptr<backbones::Backbone> backbone; // frozen
    MetricWeights weights;
    StabilityConstants constants;
};

// uniform-weight metric over a spec (forced frozen)
PerceptualMetric make_metric(const backbones::BackboneSpec& spec,
                             StabilityConstants constants = {});

// per-stage l and s tables for an extracted pair of pyramids
struct SimilarityTables {
    std::vector<Tensor> l; // l[i] shape (n_i)
    std::vector<Tensor> s;
};

SimilarityTables similarity_tables(const PerceptualMetric& metric,
                                   const PairedSample& pair);

double distance_from_tables(const MetricWeights& w, const SimilarityTables& t);

double perceptual_distance(const PerceptualMetric& metric, const PairedSample& pair);

// d l_per/d alpha_ij = -l_ij, d l_per/d beta_ij = -s_ij (metric is linear in
// the weights); returned in MetricWeights slots
MetricWeights weight_gradients(const PerceptualMetric& metric, const PairedSample& pair);

struct MetricTrainConfig {
    int total_iters = 5000;
    double initial_lr = 1e-4;
    int halve_every = 1000;
    int batch_size = 32;
    double margin = 0.025; // on min-max normalized MOS
    uint64_t seed = 0;
};

struct MetricTrainLogRow {
    int iter = 0;
    double lr = 0.0;
    double objective = 0.0;
    double constraint_residual = 0.0; // |sum(alpha+beta) - 1| after projection
};

struct MetricTrainResult {
    PerceptualMetric metric;
    std::vector<MetricTrainLogRow> log;
};

// margin ranking on MOS-ordered pairs; backbone stays frozen (only the
// weights move). Dataset rows are (pair, mos) where higher MOS = better.
MetricTrainResult train_metric(PerceptualMetric metric,
                               const std::vector<std::pair<PairedSample, double>>& dataset,
                               const MetricTrainConfig& cfg);

// checkpoint: weight container (backbone + alpha/beta) + JSON sidecar
void save_metric(const PerceptualMetric& metric, const MetricTrainConfig& schedule,
                 const std::string& weights_path, const std::string& sidecar_path);
PerceptualMetric load_metric(const std::string& weights_path,
                             const std::string& sidecar_path);

} // namespace perceptlab::perceptual
