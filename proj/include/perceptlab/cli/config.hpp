#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "perceptlab/adversarial/adversarial.hpp"
#include "perceptlab/core/types.hpp"
#include "perceptlab/evaluation/evaluation.hpp"
#include "perceptlab/objective/objective.hpp"
#include "perceptlab/srharness/srharness.hpp"

namespace perceptlab::cli {

struct MetricBlock {
    std::string dataset_manifest; // distorted_path,reference_path,mos
    int total_iters = 5000;
    double initial_lr = 1e-4;
    int halve_every = 1000;
    int batch_size = 32;
    double margin = 0.025;
};

struct SrBlock {
    srharness::SRModelSpec model{};
    srharness::SRDatasetSpec dataset{};
    objective::SettingName setting = objective::SettingName::RPA;
    std::optional<double> lambda1, lambda2, lambda3; // override the setting
    srharness::TrainSchedule stage1 = srharness::paper_stage1_schedule();
    srharness::TrainSchedule stage2 = srharness::paper_stage2_schedule();
    std::string metric_weights, metric_sidecar; // trained metric for l_per
};

struct AdversarialBlock {
    std::string backbone = "tiny";
    adversarial::HeadType head = adversarial::HeadType::Vanilla;
    int patch_rows = 0, patch_cols = 0; // patch head only
    std::vector<double> lambda3_sweep = objective::lambda3_sweep_grid();
    std::vector<std::string> sweep_backbones; // defaults to {backbone}
};

struct EvalBlock {
    std::vector<std::string> benchmarks; // FR manifests for eval-metric
    double train_ratio = 0.6, val_ratio = 0.2, test_ratio = 0.2;
    bool group_by_content = true;
    std::vector<evaluation::InitMode> init_modes{evaluation::InitMode::Random};
    std::string transfer_manifest;
    evaluation::IqaTask task = evaluation::IqaTask::Nr;
    std::string disc_weights, disc_sidecar; // gan init source
    std::string imagenet_weights;           // imagenet-file init source
    evaluation::NrTrainConfig nr{};
    std::string metric_weights, metric_sidecar; // eval-metric checkpoint
};

struct ReportSet {
    std::string label;    // table column
    std::string manifest; // image_path,evaluator,raw_score
};

struct ReportCalibration {
    std::string evaluator;
    std::string manifest; // item_id,raw_score,mos fitting data
};

struct ReportBlock {
    std::vector<ReportSet> sets;
    std::vector<ReportCalibration> calibrations;
};

struct ExperimentConfig {
    RngSeed seed{0};
    std::string output_dir = "runs";
    std::string backbone = "tiny"; // metric/transfer backbone (registry name)
    std::optional<MetricBlock> metric;
    std::optional<SrBlock> sr;
    std::optional<AdversarialBlock> adversarial;
    std::optional<EvalBlock> eval;
    std::optional<ReportBlock> report;
};

// strict parse: unknown keys, unresolvable names, and invariant violations
// are collected into one itemized ValidationError. Absent fields fall back
// to the published defaults.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text);

// canonical JSON (sorted keys, defaults materialized); parse of the output
// reproduces the config exactly
std::string serialize_config(const ExperimentConfig& cfg);

uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

// setting lambdas with any overrides applied
objective::SettingLambdas effective_lambdas(const SrBlock& sr);

} // namespace perceptlab::cli
