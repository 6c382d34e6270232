#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "perceptlab/core/csv.hpp"
#include "perceptlab/core/types.hpp"
#include "perceptlab/perceptual/metric.hpp"

namespace perceptlab::evaluation {

// Spearman rank correlation; ties get average ranks. Lengths must match and
// be >= 3; constant vectors raise DomainError (correlation undefined).
double srcc(const std::vector<double>& scores, const std::vector<double>& mos);

// four-parameter monotonic logistic; eta1/eta2 pin the output range, eta3 is
// the midpoint, eta4 the spread (used as |eta4|)
struct LogisticParams {
    double eta1 = 100.0; // fixed
    double eta2 = 1.0;   // fixed
    double eta3 = 0.0;   // fitted
    double eta4 = 1.0;   // fitted
};

// N(x) = (eta1 - eta2) / (1 + exp(-(x - eta3)/|eta4|)) + eta2
double apply_rescale(const LogisticParams& params, double raw);

// least-squares fit of (eta3, eta4) against MOS min-max rescaled to [1, 100];
// needs >= 4 records with MOS and non-constant raw scores. Damped
// Gauss-Newton from several seeds; FitError after 500 iterations without
// convergence. The returned fit never correlates worse with MOS than the raw
// scores do (near-affine fallback).
LogisticParams fit_logistic(const std::vector<ScoreRecord>& records);

// Pearson correlation, after applying `calibration` to scores when given
double plcc(const std::vector<double>& scores, const std::vector<double>& mos,
            const std::optional<LogisticParams>& calibration = std::nullopt);

struct CorrelationReport {
    double srcc = 0.0;
    double plcc = 0.0;
    int n = 0; // >= 3
};

struct SplitSpec {
    double train_ratio = 0.6;
    double val_ratio = 0.2;
    double test_ratio = 0.2;
    RngSeed seed{0};
    bool group_by_content = true;
};

struct SplitIndices {
    std::vector<int> train, val, test;
};

// deterministic 6:2:2-style split; indices sharing a content key always land
// in the same partition when grouping is on
SplitIndices split_by_content(const std::vector<std::string>& content_keys,
                              const SplitSpec& spec);

// content key for an image path: filename stem up to the last '_'
// ("c07_d3.png" -> "c07"), the whole stem when there is none
std::string content_key(const std::string& image_path);

// ---- FR benchmark running ------------------------------------------------

struct FrDataset {
    std::string name;
    std::vector<FrManifestRow> rows;
};

// reads a `distorted_path,reference_path,mos` manifest; relative paths are
// resolved against the manifest's directory; name = file stem
FrDataset load_fr_dataset(const std::filesystem::path& manifest_path);

struct NamedReport {
    std::string dataset;
    CorrelationReport report;
};

struct FrBenchmarkReport {
    std::vector<NamedReport> per_dataset;
    CorrelationReport macro; // unweighted mean over datasets; n = total items
};

// quality = -distance per item, then SRCC and logistic-calibrated PLCC per
// dataset. Unreadable/missing files are collected into one itemized IoError.
FrBenchmarkReport run_fr_benchmark(const perceptual::PerceptualMetric& metric,
                                   const std::vector<FrDataset>& datasets);

// ---- discriminator-transfer experiment -------------------------------------

enum class InitMode { Random, Gan, ImagenetFile };

InitMode parse_init_mode(const std::string& name); // random | gan | imagenet-file
std::string init_mode_to_string(InitMode mode);

struct InitSpec {
    InitMode mode = InitMode::Random;
    std::string disc_weights_path; // gan
    std::string disc_sidecar_path; // gan
    std::string weight_file_path;  // imagenet-file
};

enum class IqaTask { Fr, Nr };

IqaTask parse_iqa_task(const std::string& name); // fr | nr
std::string iqa_task_to_string(IqaTask task);

// NR head training: global-average pooling + linear output regressed onto
// min-max-normalized MOS with mean-squared error, backbone trainable
struct NrTrainConfig {
    int total_iters = 5000;
    double initial_lr = 1e-4;
    int halve_every = 1000;
    int batch_size = 32;
};

struct TransferConfig {
    std::string backbone_name = "tiny"; // registry entry supplying the layout
    InitSpec init;
    IqaTask task = IqaTask::Nr;
    SplitSpec split;
    uint64_t seed = 0;
    perceptual::MetricTrainConfig metric_cfg{}; // FR protocol
    NrTrainConfig nr_cfg{};                     // NR protocol
};

// FR: trains a frozen-backbone metric on the train split of a
// `distorted_path,reference_path,mos` manifest. NR: trains the regression
// head (trainable backbone) on an `image_path,mos` manifest. Both report
// test-split SRCC and calibrated PLCC. Relative manifest paths resolve
// against the manifest directory.
CorrelationReport run_transfer_experiment(const TransferConfig& cfg,
                                          const std::filesystem::path& manifest_path);

// ---- report bundles --------------------------------------------------------

struct ReportBundle {
    struct FrRow {
        std::string label; // metric/backbone
        std::vector<NamedReport> per_dataset;
        CorrelationReport average;
    };
    std::vector<FrRow> fr_rows; // all rows must share one dataset sequence

    struct TransferRow {
        std::string backbone;
        std::string init;
        CorrelationReport report;
    };
    std::vector<TransferRow> transfer_rows;

    struct SweepSeries {
        std::string label;
        std::vector<std::pair<double, double>> points; // (lambda3, score)
    };
    std::vector<SweepSeries> sweep_series;

    struct EvaluatorRow {
        std::string evaluator;
        std::vector<std::pair<std::string, double>> scores; // (column label, score)
    };
    std::vector<EvaluatorRow> evaluator_rows; // shared column-label sequence

    struct ScatterPoint {
        std::string label;
        double x = 0.0; // IQA capability (SRCC)
        double y = 0.0; // achieved quality
    };
    std::vector<ScatterPoint> scatter_points;
};

// writes CSV tables and SVG plots for every nonempty section into out_dir;
// byte-identical on rerun with the same bundle. Empty bundle -> DomainError;
// unwritable directory -> IoError. Evaluator tables carry a per-row
// population-std column and a closing per-column Average row.
void emit_report(const ReportBundle& bundle, const std::filesystem::path& out_dir);

} // namespace perceptlab::evaluation
