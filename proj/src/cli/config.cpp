#include "perceptlab/cli/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "perceptlab/backbones/backbone.hpp"

namespace perceptlab::cli {

namespace {

using Json = nlohmann::json;

struct Issues {
    std::vector<std::string> items;

    void add(const std::string& where, const std::string& what) {
        items.push_back(where + ": " + what);
    }
    void raise_if_any() const {
        if (items.empty()) return;
        std::string msg = "invalid config";
        for (const auto& it : items) msg += "\n  - " + it;
        throw ValidationError(msg);
    }
};

std::string joined(const std::string& where, const std::string& key) {
    return where.empty() ? key : where + "." + key;
}

void check_keys(const Json& j, const std::string& where,
                std::initializer_list<const char*> allowed, Issues& issues) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) issues.add(joined(where, it.key()), "unknown key");
    }
}

template <typename T>
void get_field(const Json& j, const std::string& where, const char* key, T& dst,
               Issues& issues) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const Json::exception&) {
        issues.add(joined(where, key), "wrong type");
    }
}

bool registered_backbone(const std::string& name) {
    return backbones::BackboneRegistry::instance().has(name);
}

void check_backbone_name(const std::string& name, const std::string& where,
                         Issues& issues) {
    if (name.empty())
        issues.add(where, "required");
    else if (!registered_backbone(name))
        issues.add(where, "backbone '" + name + "' is not registered");
}

MetricBlock parse_metric_block(const Json& j, Issues& issues) {
    MetricBlock b;
    check_keys(j, "metric",
               {"dataset_manifest", "total_iters", "initial_lr", "halve_every",
                "batch_size", "margin"},
               issues);
    get_field(j, "metric", "dataset_manifest", b.dataset_manifest, issues);
    get_field(j, "metric", "total_iters", b.total_iters, issues);
    get_field(j, "metric", "initial_lr", b.initial_lr, issues);
    get_field(j, "metric", "halve_every", b.halve_every, issues);
    get_field(j, "metric", "batch_size", b.batch_size, issues);
    get_field(j, "metric", "margin", b.margin, issues);
    if (b.dataset_manifest.empty()) issues.add("metric.dataset_manifest", "required");
    if (b.total_iters <= 0) issues.add("metric.total_iters", "must be positive");
    if (!(b.initial_lr > 0.0)) issues.add("metric.initial_lr", "must be positive");
    if (b.halve_every <= 0) issues.add("metric.halve_every", "must be positive");
    if (b.batch_size <= 0) issues.add("metric.batch_size", "must be positive");
    if (!(b.margin >= 0.0)) issues.add("metric.margin", "must be nonnegative");
    return b;
}

srharness::TrainSchedule parse_schedule(const Json& j, const std::string& where,
                                        srharness::TrainSchedule s, Issues& issues) {
    check_keys(j, where, {"total_iters", "initial_lr", "decay_steps", "batch_size"},
               issues);
    get_field(j, where, "total_iters", s.total_iters, issues);
    get_field(j, where, "initial_lr", s.initial_lr, issues);
    get_field(j, where, "decay_steps", s.decay_steps, issues);
    get_field(j, where, "batch_size", s.batch_size, issues);
    try {
        srharness::validate_schedule(s);
    } catch (const Error& e) {
        issues.add(where, e.what());
    }
    return s;
}

SrBlock parse_sr_block(const Json& j, Issues& issues) {
    SrBlock b;
    check_keys(j, "sr",
               {"model", "dataset", "setting", "lambda1", "lambda2", "lambda3",
                "stage1", "stage2", "metric_weights", "metric_sidecar"},
               issues);
    if (j.contains("model")) {
        if (!j.at("model").is_object()) {
            issues.add("sr.model", "must be an object");
        } else {
            const Json& m = j.at("model");
            check_keys(m, "sr.model", {"scale", "channels", "blocks", "weight_path"},
                       issues);
            get_field(m, "sr.model", "scale", b.model.scale, issues);
            get_field(m, "sr.model", "channels", b.model.channels, issues);
            get_field(m, "sr.model", "blocks", b.model.blocks, issues);
            get_field(m, "sr.model", "weight_path", b.model.weight_path, issues);
        }
    }
    if (j.contains("dataset")) {
        if (!j.at("dataset").is_object()) {
            issues.add("sr.dataset", "must be an object");
        } else {
            const Json& d = j.at("dataset");
            check_keys(d, "sr.dataset", {"reference_dir", "scale", "split"}, issues);
            get_field(d, "sr.dataset", "reference_dir", b.dataset.reference_dir, issues);
            get_field(d, "sr.dataset", "scale", b.dataset.scale, issues);
            get_field(d, "sr.dataset", "split", b.dataset.split, issues);
        }
    }
    if (b.dataset.reference_dir.empty())
        issues.add("sr.dataset.reference_dir", "required");
    if (b.model.scale < 1) issues.add("sr.model.scale", "must be >= 1");
    if (b.model.channels <= 0) issues.add("sr.model.channels", "must be positive");
    if (b.model.blocks <= 0) issues.add("sr.model.blocks", "must be positive");
    if (b.dataset.scale != b.model.scale)
        issues.add("sr.dataset.scale", "must match sr.model.scale");

    if (j.contains("setting")) {
        std::string s;
        get_field(j, "sr", "setting", s, issues);
        try {
            b.setting = objective::parse_setting(s);
        } catch (const Error& e) {
            issues.add("sr.setting", e.what());
        }
    }
    const char* lambda_keys[] = {"lambda1", "lambda2", "lambda3"};
    std::optional<double>* lambdas[] = {&b.lambda1, &b.lambda2, &b.lambda3};
    for (int i = 0; i < 3; ++i)
        if (j.contains(lambda_keys[i])) {
            double v = 0.0;
            get_field(j, "sr", lambda_keys[i], v, issues);
            if (!std::isfinite(v) || v < 0.0)
                issues.add(joined("sr", lambda_keys[i]),
                           "must be finite and nonnegative");
            else
                *lambdas[i] = v;
        }

    b.stage1.stage = 1;
    b.stage2.stage = 2;
    if (j.contains("stage1") && j.at("stage1").is_object())
        b.stage1 = parse_schedule(j.at("stage1"), "sr.stage1", b.stage1, issues);
    else if (j.contains("stage1"))
        issues.add("sr.stage1", "must be an object");
    if (j.contains("stage2") && j.at("stage2").is_object())
        b.stage2 = parse_schedule(j.at("stage2"), "sr.stage2", b.stage2, issues);
    else if (j.contains("stage2"))
        issues.add("sr.stage2", "must be an object");

    get_field(j, "sr", "metric_weights", b.metric_weights, issues);
    get_field(j, "sr", "metric_sidecar", b.metric_sidecar, issues);
    if (b.metric_weights.empty() != b.metric_sidecar.empty())
        issues.add("sr.metric_weights",
                   "metric_weights and metric_sidecar go together");
    return b;
}

AdversarialBlock parse_adversarial_block(const Json& j, Issues& issues) {
    AdversarialBlock b;
    check_keys(j, "adversarial",
               {"backbone", "head", "patch_rows", "patch_cols", "lambda3_sweep",
                "sweep_backbones"},
               issues);
    get_field(j, "adversarial", "backbone", b.backbone, issues);
    check_backbone_name(b.backbone, "adversarial.backbone", issues);
    if (j.contains("head")) {
        std::string h;
        get_field(j, "adversarial", "head", h, issues);
        if (h == "vanilla")
            b.head = adversarial::HeadType::Vanilla;
        else if (h == "patch")
            b.head = adversarial::HeadType::Patch;
        else
            issues.add("adversarial.head", "expected vanilla or patch");
    }
    get_field(j, "adversarial", "patch_rows", b.patch_rows, issues);
    get_field(j, "adversarial", "patch_cols", b.patch_cols, issues);
    if (b.head == adversarial::HeadType::Patch) {
        if (b.patch_rows <= 0 || b.patch_cols <= 0)
            issues.add("adversarial.patch_rows",
                       "patch head needs a positive patch_rows x patch_cols grid");
    } else if (b.patch_rows != 0 || b.patch_cols != 0) {
        issues.add("adversarial.patch_rows", "patch grid requires the patch head");
    }
    get_field(j, "adversarial", "lambda3_sweep", b.lambda3_sweep, issues);
    for (double v : b.lambda3_sweep)
        if (!std::isfinite(v) || v <= 0.0) {
            issues.add("adversarial.lambda3_sweep", "values must be finite and positive");
            break;
        }
    get_field(j, "adversarial", "sweep_backbones", b.sweep_backbones, issues);
    if (b.sweep_backbones.empty()) b.sweep_backbones = {b.backbone};
    for (const auto& name : b.sweep_backbones)
        check_backbone_name(name, "adversarial.sweep_backbones", issues);
    return b;
}

EvalBlock parse_eval_block(const Json& j, Issues& issues) {
    EvalBlock b;
    check_keys(j, "eval",
               {"benchmarks", "split", "init_modes", "transfer_manifest", "task",
                "disc_weights", "disc_sidecar", "imagenet_weights", "nr",
                "metric_weights", "metric_sidecar"},
               issues);
    get_field(j, "eval", "benchmarks", b.benchmarks, issues);
    for (const auto& p : b.benchmarks)
        if (p.empty()) {
            issues.add("eval.benchmarks", "entries must be nonempty paths");
            break;
        }
    if (j.contains("split")) {
        if (!j.at("split").is_object()) {
            issues.add("eval.split", "must be an object");
        } else {
            const Json& s = j.at("split");
            check_keys(s, "eval.split", {"train", "val", "test", "group_by_content"},
                       issues);
            get_field(s, "eval.split", "train", b.train_ratio, issues);
            get_field(s, "eval.split", "val", b.val_ratio, issues);
            get_field(s, "eval.split", "test", b.test_ratio, issues);
            get_field(s, "eval.split", "group_by_content", b.group_by_content, issues);
        }
    }
    if (b.train_ratio < 0.0 || b.val_ratio < 0.0 || b.test_ratio < 0.0)
        issues.add("eval.split", "ratios must be nonnegative");
    else if (std::abs(b.train_ratio + b.val_ratio + b.test_ratio - 1.0) > 1e-9)
        issues.add("eval.split", "ratios must sum to 1");
    if (j.contains("init_modes")) {
        std::vector<std::string> names;
        get_field(j, "eval", "init_modes", names, issues);
        b.init_modes.clear();
        for (const auto& n : names) {
            try {
                b.init_modes.push_back(evaluation::parse_init_mode(n));
            } catch (const Error& e) {
                issues.add("eval.init_modes", e.what());
            }
        }
        std::set<std::string> seen;
        for (const auto& n : names)
            if (!seen.insert(n).second) {
                issues.add("eval.init_modes", "duplicate init mode '" + n + "'");
                break;
            }
        if (b.init_modes.empty())
            b.init_modes = {evaluation::InitMode::Random};
    }
    get_field(j, "eval", "transfer_manifest", b.transfer_manifest, issues);
    if (j.contains("task")) {
        std::string t;
        get_field(j, "eval", "task", t, issues);
        try {
            b.task = evaluation::parse_iqa_task(t);
        } catch (const Error& e) {
            issues.add("eval.task", e.what());
        }
    }
    get_field(j, "eval", "disc_weights", b.disc_weights, issues);
    get_field(j, "eval", "disc_sidecar", b.disc_sidecar, issues);
    get_field(j, "eval", "imagenet_weights", b.imagenet_weights, issues);
    for (auto mode : b.init_modes) {
        if (mode == evaluation::InitMode::Gan &&
            (b.disc_weights.empty() || b.disc_sidecar.empty()))
            issues.add("eval.disc_weights",
                       "gan init needs disc_weights and disc_sidecar");
        if (mode == evaluation::InitMode::ImagenetFile && b.imagenet_weights.empty())
            issues.add("eval.imagenet_weights", "imagenet-file init needs a weight file");
    }
    if (j.contains("nr")) {
        if (!j.at("nr").is_object()) {
            issues.add("eval.nr", "must be an object");
        } else {
            const Json& nr = j.at("nr");
            check_keys(nr, "eval.nr",
                       {"total_iters", "initial_lr", "halve_every", "batch_size"},
                       issues);
            get_field(nr, "eval.nr", "total_iters", b.nr.total_iters, issues);
            get_field(nr, "eval.nr", "initial_lr", b.nr.initial_lr, issues);
            get_field(nr, "eval.nr", "halve_every", b.nr.halve_every, issues);
            get_field(nr, "eval.nr", "batch_size", b.nr.batch_size, issues);
        }
    }
    if (b.nr.total_iters <= 0) issues.add("eval.nr.total_iters", "must be positive");
    if (!(b.nr.initial_lr > 0.0)) issues.add("eval.nr.initial_lr", "must be positive");
    if (b.nr.halve_every <= 0) issues.add("eval.nr.halve_every", "must be positive");
    if (b.nr.batch_size <= 0) issues.add("eval.nr.batch_size", "must be positive");
    get_field(j, "eval", "metric_weights", b.metric_weights, issues);
    get_field(j, "eval", "metric_sidecar", b.metric_sidecar, issues);
    if (b.metric_weights.empty() != b.metric_sidecar.empty())
        issues.add("eval.metric_weights",
                   "metric_weights and metric_sidecar go together");
    return b;
}

ReportBlock parse_report_block(const Json& j, Issues& issues) {
    ReportBlock b;
    check_keys(j, "report", {"sets", "calibrations"}, issues);
    if (j.contains("sets")) {
        if (!j.at("sets").is_array()) {
            issues.add("report.sets", "must be an array");
        } else {
            std::set<std::string> labels;
            for (const auto& e : j.at("sets")) {
                if (!e.is_object()) {
                    issues.add("report.sets", "entries must be objects");
                    continue;
                }
                check_keys(e, "report.sets", {"label", "manifest"}, issues);
                ReportSet s;
                get_field(e, "report.sets", "label", s.label, issues);
                get_field(e, "report.sets", "manifest", s.manifest, issues);
                if (s.label.empty() || s.manifest.empty())
                    issues.add("report.sets", "label and manifest are required");
                else if (!labels.insert(s.label).second)
                    issues.add("report.sets", "duplicate label '" + s.label + "'");
                b.sets.push_back(std::move(s));
            }
        }
    }
    if (b.sets.empty()) issues.add("report.sets", "at least one set is required");
    if (j.contains("calibrations")) {
        if (!j.at("calibrations").is_array()) {
            issues.add("report.calibrations", "must be an array");
        } else {
            std::set<std::string> names;
            for (const auto& e : j.at("calibrations")) {
                if (!e.is_object()) {
                    issues.add("report.calibrations", "entries must be objects");
                    continue;
                }
                check_keys(e, "report.calibrations", {"evaluator", "manifest"}, issues);
                ReportCalibration c;
                get_field(e, "report.calibrations", "evaluator", c.evaluator, issues);
                get_field(e, "report.calibrations", "manifest", c.manifest, issues);
                if (c.evaluator.empty() || c.manifest.empty())
                    issues.add("report.calibrations",
                               "evaluator and manifest are required");
                else if (!names.insert(c.evaluator).second)
                    issues.add("report.calibrations",
                               "duplicate evaluator '" + c.evaluator + "'");
                b.calibrations.push_back(std::move(c));
            }
        }
    }
    return b;
}

} // namespace

objective::SettingLambdas effective_lambdas(const SrBlock& sr) {
    objective::SettingLambdas l = objective::setting_lambdas(sr.setting);
    if (sr.lambda1) l.lambda1 = *sr.lambda1;
    if (sr.lambda2) l.lambda2 = *sr.lambda2;
    if (sr.lambda3) l.lambda3 = *sr.lambda3;
    return l;
}

ExperimentConfig parse_config_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw ValidationError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ValidationError("config root must be an object");

    Issues issues;
    ExperimentConfig cfg;
    check_keys(j, "",
               {"seed", "output_dir", "backbone", "metric", "sr", "adversarial",
                "eval", "report"},
               issues);
    get_field(j, "", "seed", cfg.seed.value, issues);
    get_field(j, "", "output_dir", cfg.output_dir, issues);
    get_field(j, "", "backbone", cfg.backbone, issues);
    check_backbone_name(cfg.backbone, "backbone", issues);
    if (cfg.output_dir.empty()) issues.add("output_dir", "must be nonempty");

    auto parse_block = [&](const char* key, auto parser, auto& dst) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_object()) {
            issues.add(key, "must be an object");
            return;
        }
        dst = parser(j.at(key), issues);
    };
    parse_block("metric", parse_metric_block, cfg.metric);
    parse_block("sr", parse_sr_block, cfg.sr);
    parse_block("adversarial", parse_adversarial_block, cfg.adversarial);
    parse_block("eval", parse_eval_block, cfg.eval);
    parse_block("report", parse_report_block, cfg.report);

    if (cfg.sr && effective_lambdas(*cfg.sr).lambda3 > 0.0 && !cfg.adversarial)
        issues.add("sr", "an adversarial block is required when lambda3 > 0");

    issues.raise_if_any();
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read config: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    Json j;
    j["seed"] = cfg.seed.value;
    j["output_dir"] = cfg.output_dir;
    j["backbone"] = cfg.backbone;
    if (cfg.metric) {
        const MetricBlock& b = *cfg.metric;
        Json m;
        m["dataset_manifest"] = b.dataset_manifest;
        m["total_iters"] = b.total_iters;
        m["initial_lr"] = b.initial_lr;
        m["halve_every"] = b.halve_every;
        m["batch_size"] = b.batch_size;
        m["margin"] = b.margin;
        j["metric"] = std::move(m);
    }
    if (cfg.sr) {
        const SrBlock& b = *cfg.sr;
        Json s;
        Json model;
        model["scale"] = b.model.scale;
        model["channels"] = b.model.channels;
        model["blocks"] = b.model.blocks;
        if (!b.model.weight_path.empty()) model["weight_path"] = b.model.weight_path;
        s["model"] = std::move(model);
        Json ds;
        ds["reference_dir"] = b.dataset.reference_dir;
        ds["scale"] = b.dataset.scale;
        ds["split"] = b.dataset.split;
        s["dataset"] = std::move(ds);
        s["setting"] = objective::setting_to_string(b.setting);
        if (b.lambda1) s["lambda1"] = *b.lambda1;
        if (b.lambda2) s["lambda2"] = *b.lambda2;
        if (b.lambda3) s["lambda3"] = *b.lambda3;
        auto sched = [](const srharness::TrainSchedule& t) {
            Json x;
            x["total_iters"] = t.total_iters;
            x["initial_lr"] = t.initial_lr;
            x["decay_steps"] = t.decay_steps;
            x["batch_size"] = t.batch_size;
            return x;
        };
        s["stage1"] = sched(b.stage1);
        s["stage2"] = sched(b.stage2);
        if (!b.metric_weights.empty()) {
            s["metric_weights"] = b.metric_weights;
            s["metric_sidecar"] = b.metric_sidecar;
        }
        j["sr"] = std::move(s);
    }
    if (cfg.adversarial) {
        const AdversarialBlock& b = *cfg.adversarial;
        Json a;
        a["backbone"] = b.backbone;
        a["head"] = b.head == adversarial::HeadType::Patch ? "patch" : "vanilla";
        if (b.head == adversarial::HeadType::Patch) {
            a["patch_rows"] = b.patch_rows;
            a["patch_cols"] = b.patch_cols;
        }
        a["lambda3_sweep"] = b.lambda3_sweep;
        a["sweep_backbones"] = b.sweep_backbones;
        j["adversarial"] = std::move(a);
    }
    if (cfg.eval) {
        const EvalBlock& b = *cfg.eval;
        Json e;
        if (!b.benchmarks.empty()) e["benchmarks"] = b.benchmarks;
        Json split;
        split["train"] = b.train_ratio;
        split["val"] = b.val_ratio;
        split["test"] = b.test_ratio;
        split["group_by_content"] = b.group_by_content;
        e["split"] = std::move(split);
        Json modes = Json::array();
        for (auto m : b.init_modes) modes.push_back(evaluation::init_mode_to_string(m));
        e["init_modes"] = std::move(modes);
        if (!b.transfer_manifest.empty()) e["transfer_manifest"] = b.transfer_manifest;
        e["task"] = evaluation::iqa_task_to_string(b.task);
        if (!b.disc_weights.empty()) e["disc_weights"] = b.disc_weights;
        if (!b.disc_sidecar.empty()) e["disc_sidecar"] = b.disc_sidecar;
        if (!b.imagenet_weights.empty()) e["imagenet_weights"] = b.imagenet_weights;
        Json nr;
        nr["total_iters"] = b.nr.total_iters;
        nr["initial_lr"] = b.nr.initial_lr;
        nr["halve_every"] = b.nr.halve_every;
        nr["batch_size"] = b.nr.batch_size;
        e["nr"] = std::move(nr);
        if (!b.metric_weights.empty()) {
            e["metric_weights"] = b.metric_weights;
            e["metric_sidecar"] = b.metric_sidecar;
        }
        j["eval"] = std::move(e);
    }
    if (cfg.report) {
        const ReportBlock& b = *cfg.report;
        Json r;
        Json sets = Json::array();
        for (const auto& s : b.sets)
            sets.push_back(Json{{"label", s.label}, {"manifest", s.manifest}});
        r["sets"] = std::move(sets);
        if (!b.calibrations.empty()) {
            Json cals = Json::array();
            for (const auto& c : b.calibrations)
                cals.push_back(
                    Json{{"evaluator", c.evaluator}, {"manifest", c.manifest}});
            r["calibrations"] = std::move(cals);
        }
        j["report"] = std::move(r);
    }
    return j.dump(2) + "\n";
}

uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string s = serialize_config(cfg);
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(config_hash(cfg)));
    return buf;
}

} // namespace perceptlab::cli
