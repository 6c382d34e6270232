#include "perceptlab/cli/runner.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include <json.hpp>

#include "perceptlab/adversarial/adversarial.hpp"
#include "perceptlab/backbones/backbone.hpp"
#include "perceptlab/core/csv.hpp"
#include "perceptlab/core/image_io.hpp"
#include "perceptlab/core/rng.hpp"
#include "perceptlab/evaluation/evaluation.hpp"
#include "perceptlab/perceptual/metric.hpp"
#include "perceptlab/srharness/srharness.hpp"

namespace perceptlab::cli {

namespace fs = std::filesystem;

namespace {

template <typename T>
const T& require_block(const std::optional<T>& block, const char* name) {
    if (!block) throw ConfigError(std::string("config needs a '") + name + "' block");
    return *block;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
    if (!os.flush()) throw IoError("short write: " + path.string());
}

void write_manifest(const ExperimentConfig& cfg, const RunOptions& opt,
                    const fs::path& dir) {
    nlohmann::json m;
    m["config_hash"] = config_hash_hex(cfg);
    m["seed"] = cfg.seed.value;
    m["subcommand"] = opt.subcommand;
    m["version"] = kVersion;
    write_text(dir / "manifest.json", m.dump(2) + "\n");
    write_text(dir / "config.json", serialize_config(cfg));
}

const backbones::BackboneSpec& backbone_spec(const std::string& name) {
    return backbones::BackboneRegistry::instance().get(name);
}

// trained checkpoint when configured, uniform weights over the backbone
// otherwise
perceptual::PerceptualMetric metric_for(const std::string& weights,
                                        const std::string& sidecar,
                                        const std::string& backbone_name) {
    if (!weights.empty()) return perceptual::load_metric(weights, sidecar);
    return perceptual::make_metric(backbone_spec(backbone_name));
}

std::vector<std::pair<PairedSample, double>> load_fr_samples(
    const std::string& manifest) {
    evaluation::FrDataset ds = evaluation::load_fr_dataset(manifest);
    std::vector<std::pair<PairedSample, double>> samples;
    samples.reserve(ds.rows.size());
    for (const auto& row : ds.rows)
        samples.emplace_back(
            PairedSample(read_png(row.distorted_path), read_png(row.reference_path)),
            row.mos);
    return samples;
}

void run_train_metric(const ExperimentConfig& cfg, const fs::path& dir) {
    const MetricBlock& mb = require_block(cfg.metric, "metric");
    auto samples = load_fr_samples(mb.dataset_manifest);

    perceptual::MetricTrainConfig tcfg;
    tcfg.total_iters = mb.total_iters;
    tcfg.initial_lr = mb.initial_lr;
    tcfg.halve_every = mb.halve_every;
    tcfg.batch_size = mb.batch_size;
    tcfg.margin = mb.margin;
    tcfg.seed = derive_seed(cfg.seed.value, "metric.train");

    auto result = perceptual::train_metric(
        perceptual::make_metric(backbone_spec(cfg.backbone)), samples, tcfg);
    perceptual::save_metric(result.metric, tcfg, (dir / "metric.plwt").string(),
                            (dir / "metric.json").string());

    std::string log = "iter,lr,objective,constraint_residual\n";
    for (const auto& r : result.log)
        log += std::to_string(r.iter) + "," + format_double(r.lr) + "," +
               format_double(r.objective) + "," +
               format_double(r.constraint_residual) + "\n";
    write_text(dir / "train_metric_log.csv", log);
}

void run_eval_metric(const ExperimentConfig& cfg, const fs::path& dir) {
    const EvalBlock& ev = require_block(cfg.eval, "eval");
    if (ev.benchmarks.empty())
        throw ConfigError("eval-metric needs eval.benchmarks");

    perceptual::PerceptualMetric metric =
        metric_for(ev.metric_weights, ev.metric_sidecar, cfg.backbone);
    std::vector<evaluation::FrDataset> datasets;
    datasets.reserve(ev.benchmarks.size());
    for (const auto& path : ev.benchmarks)
        datasets.push_back(evaluation::load_fr_dataset(path));

    evaluation::FrBenchmarkReport report =
        evaluation::run_fr_benchmark(metric, datasets);

    evaluation::ReportBundle bundle;
    std::string label = ev.metric_weights.empty()
                            ? cfg.backbone
                            : fs::path(ev.metric_weights).stem().string();
    bundle.fr_rows.push_back({label, report.per_dataset, report.macro});
    evaluation::emit_report(bundle, dir);
}

struct DiscriminatorSetup {
    std::shared_ptr<adversarial::Discriminator> disc;
    std::unique_ptr<nn::Adam> opt;
};

DiscriminatorSetup make_discriminator(const AdversarialBlock& adv,
                                      const std::string& backbone_name,
                                      uint64_t seed) {
    adversarial::DiscriminatorSpec dspec;
    dspec.backbone = backbone_spec(backbone_name);
    dspec.head = adv.head;
    dspec.patch_rows = adv.patch_rows;
    dspec.patch_cols = adv.patch_cols;
    dspec.head_seed = derive_seed(seed, "disc.head");
    DiscriminatorSetup setup;
    setup.disc = std::make_shared<adversarial::Discriminator>(dspec);
    setup.opt = std::make_unique<nn::Adam>(setup.disc->params());
    return setup;
}

void run_train_sr(const ExperimentConfig& cfg, const fs::path& dir) {
    const SrBlock& sr = require_block(cfg.sr, "sr");
    auto pairs = srharness::make_pairs(sr.dataset, cfg.seed.value);

    srharness::SRModelSpec mspec = sr.model;
    mspec.init_seed = derive_seed(cfg.seed.value, "sr.init");
    srharness::SRModel model(mspec);

    {
        nn::Adam opt(model.params());
        srharness::CheckpointSink sink{(dir / "sr_stage1.plwt").string(),
                                       (dir / "sr_stage1.json").string(), 0};
        auto log = srharness::train_stage1(model, opt, pairs, sr.stage1,
                                           cfg.seed.value, 0, sink);
        srharness::write_training_log((dir / "stage1_log.csv").string(), log);
    }

    auto metric = std::make_shared<perceptual::PerceptualMetric>(
        metric_for(sr.metric_weights, sr.metric_sidecar, cfg.backbone));

    DiscriminatorSetup dsetup;
    if (cfg.adversarial)
        dsetup = make_discriminator(*cfg.adversarial, cfg.adversarial->backbone,
                                    cfg.seed.value);

    objective::SettingLambdas ls = effective_lambdas(sr);
    objective::ObjectiveConfig ocfg;
    ocfg.lambda1 = ls.lambda1;
    ocfg.lambda2 = ls.lambda2;
    ocfg.lambda3 = ls.lambda3;
    ocfg.metric = metric;
    ocfg.discriminator = dsetup.disc;

    nn::Adam opt(model.params());
    srharness::CheckpointSink sink{(dir / "sr_stage2.plwt").string(),
                                   (dir / "sr_stage2.json").string(), 0};
    auto log = srharness::train_stage2(model, opt, ocfg, dsetup.opt.get(), pairs,
                                       sr.stage2, cfg.seed.value, 0, sink);
    srharness::write_training_log((dir / "stage2_log.csv").string(), log);

    if (dsetup.disc)
        adversarial::save_discriminator(*dsetup.disc, sr.stage2.total_iters,
                                        (dir / "disc.plwt").string(),
                                        (dir / "disc.json").string());
}

void run_eval_sr(const ExperimentConfig& cfg, const fs::path& dir) {
    const SrBlock& sr = require_block(cfg.sr, "sr");
    if (sr.model.weight_path.empty())
        throw ConfigError("eval-sr needs sr.model.weight_path");
    srharness::SRModel model(sr.model);
    auto pairs = srharness::make_pairs(sr.dataset, cfg.seed.value);
    perceptual::PerceptualMetric metric =
        metric_for(sr.metric_weights, sr.metric_sidecar, cfg.backbone);

    std::string csv = "item,psnr,l_per\n";
    double mean_psnr = 0.0, mean_per = 0.0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        ImageTensor up = model.infer(pairs[i].low_res);
        double p = srharness::psnr(up, pairs[i].reference);
        double d = perceptual::perceptual_distance(
            metric, PairedSample(up, pairs[i].reference));
        csv += std::to_string(i) + "," + format_double(p) + "," +
               format_double(d) + "\n";
        mean_psnr += p;
        mean_per += d;
    }
    const double n = static_cast<double>(pairs.size());
    csv += "mean," + format_double(mean_psnr / n) + "," +
           format_double(mean_per / n) + "\n";
    write_text(dir / "eval_sr.csv", csv);
}

void run_transfer(const ExperimentConfig& cfg, const fs::path& dir) {
    const EvalBlock& ev = require_block(cfg.eval, "eval");
    if (ev.transfer_manifest.empty())
        throw ConfigError("transfer needs eval.transfer_manifest");

    perceptual::MetricTrainConfig mtc;
    if (cfg.metric) {
        mtc.total_iters = cfg.metric->total_iters;
        mtc.initial_lr = cfg.metric->initial_lr;
        mtc.halve_every = cfg.metric->halve_every;
        mtc.batch_size = cfg.metric->batch_size;
        mtc.margin = cfg.metric->margin;
    }
    mtc.seed = derive_seed(cfg.seed.value, "transfer.metric");

    evaluation::ReportBundle bundle;
    for (auto mode : ev.init_modes) {
        const std::string mode_name = evaluation::init_mode_to_string(mode);
        evaluation::TransferConfig tc;
        tc.backbone_name = cfg.backbone;
        tc.init = {mode, ev.disc_weights, ev.disc_sidecar, ev.imagenet_weights};
        tc.task = ev.task;
        tc.split = {ev.train_ratio, ev.val_ratio, ev.test_ratio,
                    RngSeed{derive_seed(cfg.seed.value, "split")},
                    ev.group_by_content};
        tc.seed = derive_seed(cfg.seed.value, "transfer." + mode_name);
        tc.metric_cfg = mtc;
        tc.nr_cfg = ev.nr;
        evaluation::CorrelationReport report =
            evaluation::run_transfer_experiment(tc, ev.transfer_manifest);
        bundle.transfer_rows.push_back({cfg.backbone, mode_name, report});
    }
    evaluation::emit_report(bundle, dir);
}

void run_sweep(const ExperimentConfig& cfg, const fs::path& dir) {
    const SrBlock& sr = require_block(cfg.sr, "sr");
    const AdversarialBlock& adv = require_block(cfg.adversarial, "adversarial");
    auto pairs = srharness::make_pairs(sr.dataset, cfg.seed.value);
    const objective::SettingLambdas ls = effective_lambdas(sr);

    evaluation::ReportBundle bundle;
    for (const auto& bb : adv.sweep_backbones) {
        evaluation::ReportBundle::SweepSeries series;
        series.label = bb;
        for (double l3 : adv.lambda3_sweep) {
            srharness::SRModelSpec mspec = sr.model;
            mspec.init_seed = derive_seed(cfg.seed.value, "sr.init");
            srharness::SRModel model(mspec);
            nn::Adam opt(model.params());

            DiscriminatorSetup dsetup = make_discriminator(adv, bb, cfg.seed.value);
            objective::ObjectiveConfig ocfg;
            ocfg.lambda1 = ls.lambda1;
            ocfg.lambda2 = ls.lambda2;
            ocfg.lambda3 = l3;
            ocfg.metric = std::make_shared<perceptual::PerceptualMetric>(
                perceptual::make_metric(backbone_spec(bb)));
            ocfg.discriminator = dsetup.disc;

            auto log = srharness::train_stage2(model, opt, ocfg, dsetup.opt.get(),
                                               pairs, sr.stage2, cfg.seed.value);
            srharness::write_training_log(
                (dir / ("log_" + bb + "_l3_" + format_double(l3) + ".csv")).string(),
                log);

            // quality proxy for the sweep curve: mean PSNR over the pairs
            double score = 0.0;
            for (const auto& p : pairs)
                score += srharness::psnr(model.infer(p.low_res), p.reference);
            score /= static_cast<double>(pairs.size());
            series.points.emplace_back(l3, score);
        }
        bundle.sweep_series.push_back(std::move(series));
    }
    evaluation::emit_report(bundle, dir);
}

void run_report(const ExperimentConfig& cfg, const fs::path& dir) {
    const ReportBlock& rb = require_block(cfg.report, "report");

    std::map<std::string, evaluation::LogisticParams> calib;
    for (const auto& c : rb.calibrations)
        calib[c.evaluator] = evaluation::fit_logistic(read_score_manifest(c.manifest));

    std::vector<std::string> evaluator_order;
    std::vector<std::pair<std::string, std::map<std::string, double>>> per_set;
    for (const auto& s : rb.sets) {
        auto rows = read_evaluator_manifest(s.manifest);
        if (rows.empty())
            throw DomainError("evaluator manifest '" + s.manifest + "' is empty");
        std::map<std::string, std::pair<double, int>> acc;
        std::vector<std::string> order;
        for (const auto& r : rows) {
            double v = r.raw_score;
            if (auto it = calib.find(r.evaluator); it != calib.end())
                v = evaluation::apply_rescale(it->second, v);
            auto [slot, inserted] = acc.try_emplace(r.evaluator, 0.0, 0);
            if (inserted) order.push_back(r.evaluator);
            slot->second.first += v;
            slot->second.second += 1;
        }
        if (evaluator_order.empty()) evaluator_order = order;
        if (acc.size() != evaluator_order.size())
            throw DomainError("evaluator sets differ across manifests");
        std::map<std::string, double> means;
        for (const auto& [name, sum] : acc)
            means[name] = sum.first / sum.second;
        per_set.emplace_back(s.label, std::move(means));
    }

    evaluation::ReportBundle bundle;
    for (const auto& name : evaluator_order) {
        evaluation::ReportBundle::EvaluatorRow row;
        row.evaluator = name;
        for (const auto& [label, means] : per_set) {
            auto it = means.find(name);
            if (it == means.end())
                throw DomainError("set '" + label + "' is missing evaluator '" +
                                  name + "'");
            row.scores.emplace_back(label, it->second);
        }
        bundle.evaluator_rows.push_back(std::move(row));
    }
    evaluation::emit_report(bundle, dir);
}

int fail(int code, const char* kind, const std::string& what) {
    std::cerr << "perceptlab: " << kind << ": " << what << "\n";
    return code;
}

} // namespace

const std::vector<std::string>& subcommand_names() {
    static const std::vector<std::string> names = {
        "train-metric", "eval-metric", "train-sr", "eval-sr",
        "transfer",     "sweep",       "report"};
    return names;
}

fs::path resolve_run_dir(const ExperimentConfig& cfg, const RunOptions& opt) {
    if (opt.out_dir) return *opt.out_dir;
    fs::path base = cfg.output_dir;
    if (base.is_relative())
        if (const char* root = std::getenv("PERCEPTLAB_OUTPUT_ROOT"); root && *root)
            base = fs::path(root) / base;
    return base / opt.subcommand;
}

void run_subcommand(const RunOptions& opt) {
    ExperimentConfig cfg = parse_config(opt.config_path);
    if (opt.setting) {
        if (!cfg.sr)
            throw ValidationError("--setting requires an sr block in the config");
        cfg.sr->setting = objective::parse_setting(*opt.setting);
        if (effective_lambdas(*cfg.sr).lambda3 > 0.0 && !cfg.adversarial)
            throw ValidationError(
                "sr: an adversarial block is required when lambda3 > 0");
    }

    const fs::path dir = resolve_run_dir(cfg, opt);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create run directory " + dir.string() + ": " +
                      ec.message());
    write_manifest(cfg, opt, dir);

    if (opt.subcommand == "train-metric")
        run_train_metric(cfg, dir);
    else if (opt.subcommand == "eval-metric")
        run_eval_metric(cfg, dir);
    else if (opt.subcommand == "train-sr")
        run_train_sr(cfg, dir);
    else if (opt.subcommand == "eval-sr")
        run_eval_sr(cfg, dir);
    else if (opt.subcommand == "transfer")
        run_transfer(cfg, dir);
    else if (opt.subcommand == "sweep")
        run_sweep(cfg, dir);
    else if (opt.subcommand == "report")
        run_report(cfg, dir);
    else
        throw ValidationError("unknown subcommand '" + opt.subcommand + "'");
}

int dispatch(const RunOptions& opt) {
    try {
        run_subcommand(opt);
        return 0;
    } catch (const ValidationError& e) {
        return fail(2, "validation error", e.what());
    } catch (const ConfigError& e) {
        return fail(2, "config error", e.what());
    } catch (const RegistryError& e) {
        return fail(2, "config error", e.what());
    } catch (const DimensionError& e) {
        return fail(2, "validation error", e.what());
    } catch (const DomainError& e) {
        return fail(2, "validation error", e.what());
    } catch (const DivergenceError& e) {
        return fail(3, "divergence", e.what());
    } catch (const FitError& e) {
        return fail(3, "divergence", e.what());
    } catch (const DegenerateWeightsError& e) {
        return fail(3, "divergence", e.what());
    } catch (const IoError& e) {
        return fail(4, "i/o error", e.what());
    } catch (const std::exception& e) {
        return fail(1, "error", e.what());
    }
}

} // namespace perceptlab::cli
