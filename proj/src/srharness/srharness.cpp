#include "perceptlab/srharness/srharness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "perceptlab/adversarial/adversarial.hpp"
#include "perceptlab/core/csv.hpp"
#include "perceptlab/core/image_io.hpp"
#include "perceptlab/core/resample.hpp"
#include "perceptlab/core/rng.hpp"
#include "perceptlab/nn/schedule.hpp"

namespace perceptlab::srharness {

void validate_schedule(const TrainSchedule& s) {
    if (s.stage != 1 && s.stage != 2) throw ConfigError("schedule stage must be 1 or 2");
    if (s.total_iters <= 0) throw ConfigError("schedule needs positive total_iters");
    if (!(s.initial_lr > 0.0)) throw ConfigError("schedule needs positive initial_lr");
    if (s.batch_size <= 0) throw ConfigError("schedule needs positive batch_size");
    for (size_t i = 0; i < s.decay_steps.size(); ++i) {
        if (s.decay_steps[i] <= 0 || s.decay_steps[i] >= s.total_iters)
            throw ConfigError("decay steps must lie strictly inside (0, total_iters)");
        if (i > 0 && s.decay_steps[i] <= s.decay_steps[i - 1])
            throw ConfigError("decay steps must be strictly increasing");
    }
}

double lr_at(const TrainSchedule& s, int iter) {
    return nn::lr_at(s.initial_lr, s.decay_steps, iter);
}

TrainSchedule paper_stage1_schedule() { return {1, 100000, 2e-4, {}, 32}; }

TrainSchedule paper_stage2_schedule() {
    return {2, 400000, 2e-4, {150000, 300000, 350000, 375000}, 32};
}

namespace {
const std::vector<double> kDecayFractions{0.375, 0.75, 0.875, 0.9375};
}

TrainSchedule desk_stage1_schedule() { return {1, 2000, 2e-4, {}, 8}; }

TrainSchedule desk_stage2_schedule() {
    return {2, 3000, 2e-4, nn::decay_at_fractions(3000, kDecayFractions), 8};
}

std::vector<SRPair> make_pairs(const SRDatasetSpec& dataset, uint64_t seed) {
    namespace fs = std::filesystem;
    if (dataset.scale < 1) throw ConfigError("SR scale must be >= 1");

    std::error_code ec;
    fs::directory_iterator it(dataset.reference_dir, ec);
    if (ec)
        throw IoError("cannot read reference dir '" + dataset.reference_dir +
                      "': " + ec.message());
    std::vector<fs::path> files;
    for (const auto& entry : it)
        if (entry.path().extension() == ".png") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw IoError("no PNG references in '" + dataset.reference_dir + "'");

    std::vector<SRPair> out;
    for (const auto& f : files) {
        ImageTensor ref = read_png(f);
        if (ref.height() % dataset.scale != 0 || ref.width() % dataset.scale != 0) {
            std::cerr << "warning: skipping " << f.string() << " ("
                      << ref.height() << "x" << ref.width()
                      << " not divisible by scale " << dataset.scale << ")\n";
            continue;
        }
        ImageTensor low = bicubic_downsample(ref, dataset.scale);
        out.push_back({std::move(low), std::move(ref)});
    }
    if (out.empty())
        throw IoError("all references in '" + dataset.reference_dir + "' were skipped");

    Rng rng(derive_seed(seed, "pairs." + dataset.split));
    rng.shuffle(out);
    return out;
}

namespace {

Tensor he_conv(Rng& rng, int cout, int cin, int k) {
    Tensor w({cout, cin, k, k});
    const double stddev = std::sqrt(2.0 / (cin * static_cast<double>(k) * k));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.truncated_normal(stddev);
    return w;
}

} // namespace

SRModel::SRModel(const SRModelSpec& spec) : spec_(spec) {
    if (spec_.scale < 1) throw ConfigError("SR scale must be >= 1");
    if (spec_.channels <= 0 || spec_.blocks <= 0)
        throw ConfigError("builtin-tiny-sr needs positive channels and blocks");

    const int c = spec_.channels;
    auto init = [&](const std::string& name, int cout, int cin) {
        Rng rng(derive_seed(spec_.init_seed, "sr." + name));
        return nn::parameter(he_conv(rng, cout, cin, 3), name + ".w");
    };

    head_w_ = init("head", c, 3);
    head_b_ = nn::parameter(Tensor::zeros({c}), "head.b");
    for (int b = 0; b < spec_.blocks; ++b) {
        const std::string id = "block" + std::to_string(b);
        block_params_.push_back(init(id + ".conv1", c, c));
        block_params_.push_back(nn::parameter(Tensor::zeros({c}), id + ".conv1.b"));
        block_params_.push_back(init(id + ".conv2", c, c));
        block_params_.push_back(nn::parameter(Tensor::zeros({c}), id + ".conv2.b"));
    }
    up_w_ = init("up", c * spec_.scale * spec_.scale, c);
    up_b_ = nn::parameter(Tensor::zeros({c * spec_.scale * spec_.scale}), "up.b");
    // zero tail: the untrained model reduces to the bicubic skip
    tail_w_ = nn::parameter(Tensor::zeros({3, c, 3, 3}), "tail.w");
    tail_b_ = nn::parameter(Tensor::zeros({3}), "tail.b");

    if (!spec_.weight_path.empty()) {
        if (!std::filesystem::exists(spec_.weight_path))
            throw ConfigError("SR weight file missing: " + spec_.weight_path);
        const nn::WeightFile wf = nn::WeightFile::load(spec_.weight_path);
        try {
            load_weights(wf.with_prefix_stripped("model."), "");
        } catch (const IoError& e) {
            throw ConfigError("SR weight file does not match spec: " +
                              std::string(e.what()));
        }
    }
}

std::vector<nn::Var> SRModel::params() const {
    std::vector<nn::Var> out{head_w_, head_b_};
    out.insert(out.end(), block_params_.begin(), block_params_.end());
    out.push_back(up_w_);
    out.push_back(up_b_);
    out.push_back(tail_w_);
    out.push_back(tail_b_);
    return out;
}

nn::Var SRModel::forward_graph(const ImageTensor& low_res) const {
    if (low_res.channels() != 3)
        throw DimensionError("SR model expects 3-channel input");
    nn::Var x = nn::constant(low_res.tensor());
    nn::Var h = nn::relu(nn::conv2d(x, head_w_, head_b_, 1, 1));
    for (int b = 0; b < spec_.blocks; ++b) {
        const auto& c1w = block_params_[static_cast<size_t>(4 * b)];
        const auto& c1b = block_params_[static_cast<size_t>(4 * b + 1)];
        const auto& c2w = block_params_[static_cast<size_t>(4 * b + 2)];
        const auto& c2b = block_params_[static_cast<size_t>(4 * b + 3)];
        nn::Var t = nn::conv2d(nn::relu(nn::conv2d(h, c1w, c1b, 1, 1)), c2w, c2b, 1, 1);
        h = nn::add(h, t);
    }
    nn::Var u = nn::relu(
        nn::pixel_shuffle(nn::conv2d(h, up_w_, up_b_, 1, 1), spec_.scale));
    nn::Var t = nn::conv2d(u, tail_w_, tail_b_, 1, 1);
    return nn::add(t, nn::constant(bicubic_upsample(low_res.tensor(), spec_.scale)));
}

ImageTensor SRModel::infer(const ImageTensor& low_res) const {
    return ImageTensor::from_tensor_clamped(forward_graph(low_res)->value);
}

void SRModel::save_weights(nn::WeightFile& wf, const std::string& prefix) const {
    for (const auto& p : params()) wf.put(prefix + p->name, p->value);
}

void SRModel::load_weights(const nn::WeightFile& wf, const std::string& prefix) {
    for (const auto& p : params()) {
        Tensor t = wf.get(prefix + p->name);
        if (!t.same_shape(p->value))
            throw ConfigError("SR checkpoint entry '" + p->name + "' has shape " +
                              t.shape_str() + ", expected " + p->value.shape_str());
        p->value = std::move(t);
    }
}

void SRModel::snap_f32() {
    for (const auto& p : params()) nn::f32_snap(p->value);
}

void write_training_log(const std::string& path, const std::vector<SRTrainLogRow>& log) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write training log: " + path);
    os << "iter,lr,l_rec,l_per,l_adv,l_d,total\n";
    for (const auto& r : log)
        os << r.iter << ',' << format_double(r.lr) << ',' << format_double(r.l_rec)
           << ',' << format_double(r.l_per) << ',' << format_double(r.l_adv) << ','
           << format_double(r.l_d) << ',' << format_double(r.total) << '\n';
    if (!os) throw IoError("write failed: " + path);
}

void save_sr_checkpoint(const SRModel& model, const nn::Adam& opt, int64_t iter,
                        int stage, const std::string& weights_path,
                        const std::string& sidecar_path) {
    nn::WeightFile wf;
    model.save_weights(wf, "model.");
    opt.save_state(wf, "adam.");
    wf.put_scalar("iter", static_cast<double>(iter));
    wf.put_scalar("stage", stage);
    wf.save(weights_path);

    nlohmann::json j;
    j["model"]["name"] = model.spec().name;
    j["model"]["scale"] = model.spec().scale;
    j["model"]["channels"] = model.spec().channels;
    j["model"]["blocks"] = model.spec().blocks;
    j["iter"] = iter;
    j["stage"] = stage;
    std::ofstream os(sidecar_path);
    if (!os) throw IoError("cannot write checkpoint sidecar: " + sidecar_path);
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write failed: " + sidecar_path);
}

SRModel load_sr_model(const std::string& weights_path, const std::string& sidecar_path,
                      int64_t* iter, int* stage) {
    std::ifstream is(sidecar_path);
    if (!is) throw IoError("cannot read checkpoint sidecar: " + sidecar_path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint sidecar is not valid JSON: " + std::string(e.what()));
    }
    SRModelSpec spec;
    try {
        spec.name = j.at("model").at("name").get<std::string>();
        spec.scale = j.at("model").at("scale").get<int>();
        spec.channels = j.at("model").at("channels").get<int>();
        spec.blocks = j.at("model").at("blocks").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint sidecar missing model fields: " +
                          std::string(e.what()));
    }
    SRModel model(spec);
    const nn::WeightFile wf = nn::WeightFile::load(weights_path);
    try {
        model.load_weights(wf, "model.");
    } catch (const IoError& e) {
        throw ConfigError("checkpoint does not match its declared spec: " +
                          std::string(e.what()));
    }
    if (iter) *iter = static_cast<int64_t>(wf.get_scalar("iter"));
    if (stage) *stage = static_cast<int>(wf.get_scalar("stage"));
    return model;
}

void load_sr_optimizer(nn::Adam& opt, const std::string& weights_path) {
    const nn::WeightFile wf = nn::WeightFile::load(weights_path);
    opt.load_state(wf, "adam.");
}

namespace {

// in-memory snapshot of the last finite-loss state, flushed on divergence
struct LastGood {
    nn::WeightFile wf;
    int64_t iter = -1;

    void capture(const SRModel& model, const nn::Adam& opt, int64_t it, int stage) {
        wf = nn::WeightFile();
        model.save_weights(wf, "model.");
        opt.save_state(wf, "adam.");
        wf.put_scalar("iter", static_cast<double>(it));
        wf.put_scalar("stage", stage);
        iter = it;
    }

    void flush(const SRModel& model, const CheckpointSink& sink, int stage) const {
        if (sink.weights_path.empty() || iter < 0) return;
        wf.save(sink.weights_path);
        if (!sink.sidecar_path.empty()) {
            nlohmann::json j;
            j["model"]["name"] = model.spec().name;
            j["model"]["scale"] = model.spec().scale;
            j["model"]["channels"] = model.spec().channels;
            j["model"]["blocks"] = model.spec().blocks;
            j["iter"] = iter;
            j["stage"] = stage;
            std::ofstream os(sink.sidecar_path);
            if (os) os << j.dump(2) << "\n";
        }
    }
};

std::vector<int> draw_batch(uint64_t seed, const char* tag, int iter, int n, int batch) {
    Rng rng(derive_seed(seed, std::string(tag) + ".iter" + std::to_string(iter)));
    std::vector<int> idx(static_cast<size_t>(batch));
    for (auto& i : idx) i = rng.uniform_int(n);
    return idx;
}

void sink_save(SRModel& model, nn::Adam& opt, int64_t iter, int stage,
               const CheckpointSink& sink, bool force) {
    if (sink.weights_path.empty()) return;
    if (!force && (sink.every <= 0 || iter % sink.every != 0)) return;
    save_sr_checkpoint(model, opt, iter, stage, sink.weights_path, sink.sidecar_path);
    model.snap_f32(); // keep the live run bitwise equal to a resumed one
    opt.snap_f32();
}

} // namespace

std::vector<SRTrainLogRow> train_stage1(SRModel& model, nn::Adam& opt,
                                        const std::vector<SRPair>& pairs,
                                        const TrainSchedule& sched, uint64_t seed,
                                        int start_iter, const CheckpointSink& sink) {
    validate_schedule(sched);
    if (sched.stage != 1) throw ConfigError("train_stage1 needs a stage-1 schedule");
    if (pairs.empty()) throw DomainError("stage-1 training needs a nonempty dataset");

    std::vector<SRTrainLogRow> log;
    LastGood last;
    last.capture(model, opt, start_iter, 1);

    for (int iter = start_iter + 1; iter <= sched.total_iters; ++iter) {
        const double lr = lr_at(sched, iter);
        const std::vector<int> batch = draw_batch(seed, "stage1", iter,
                                                  static_cast<int>(pairs.size()),
                                                  sched.batch_size);
        std::vector<nn::Var> terms;
        for (int idx : batch) {
            const SRPair& p = pairs[static_cast<size_t>(idx)];
            terms.push_back(nn::mean_abs_diff(
                model.forward_graph(p.low_res), nn::constant(p.reference.tensor())));
        }
        nn::Var loss = nn::stack_mean(terms);
        const double value = loss->value[0];
        if (!std::isfinite(value)) {
            last.flush(model, sink, 1);
            throw DivergenceError("stage-1 loss became non-finite at iteration " +
                                  std::to_string(iter) + " (last good checkpoint: iteration " +
                                  std::to_string(last.iter) + ")");
        }
        nn::backward(loss);
        opt.step(lr);
        opt.zero_grad();
        last.capture(model, opt, iter, 1);

        log.push_back({iter, lr, value, 0.0, 0.0, 0.0, value});
        sink_save(model, opt, iter, 1, sink, iter == sched.total_iters);
    }
    return log;
}

std::vector<SRTrainLogRow> train_stage2(SRModel& model, nn::Adam& opt,
                                        const objective::ObjectiveConfig& cfg,
                                        nn::Adam* disc_opt,
                                        const std::vector<SRPair>& pairs,
                                        const TrainSchedule& sched, uint64_t seed,
                                        int start_iter, const CheckpointSink& sink) {
    validate_schedule(sched);
    if (sched.stage != 2) throw ConfigError("train_stage2 needs a stage-2 schedule");
    if (pairs.empty()) throw DomainError("stage-2 training needs a nonempty dataset");
    if (!cfg.metric) throw ConfigError("stage-2 training needs a perceptual metric");
    if (cfg.lambda3 > 0.0 && !cfg.discriminator)
        throw ConfigError("lambda3 > 0 requires a discriminator");
    if (cfg.discriminator && !disc_opt)
        throw ConfigError("a configured discriminator needs its optimizer");

    // reference features are constant under a frozen metric backbone
    std::vector<FeaturePyramid> ref_feats;
    if (cfg.lambda2 > 0.0) {
        ref_feats.reserve(pairs.size());
        for (const auto& p : pairs)
            ref_feats.push_back(cfg.metric->backbone->extract(p.reference));
    }

    std::vector<SRTrainLogRow> log;
    LastGood last;
    last.capture(model, opt, start_iter, 2);

    for (int iter = start_iter + 1; iter <= sched.total_iters; ++iter) {
        const double lr = lr_at(sched, iter);
        const std::vector<int> batch = draw_batch(seed, "stage2", iter,
                                                  static_cast<int>(pairs.size()),
                                                  sched.batch_size);

        double rec_val = 0.0, per_val = 0.0;
        auto non_adv = [&](const std::vector<nn::Var>& fakes) -> nn::Var {
            std::vector<nn::Var> rec_terms, per_terms;
            for (size_t i = 0; i < fakes.size(); ++i) {
                const SRPair& p = pairs[static_cast<size_t>(batch[i])];
                rec_terms.push_back(nn::mean_abs_diff(
                    fakes[i], nn::constant(p.reference.tensor())));
                if (cfg.lambda2 > 0.0)
                    per_terms.push_back(objective::perceptual_distance_graph(
                        *cfg.metric, fakes[i],
                        ref_feats[static_cast<size_t>(batch[i])]));
            }
            nn::Var rec_mean = nn::stack_mean(rec_terms);
            rec_val = rec_mean->value[0];
            std::vector<std::pair<double, nn::Var>> terms;
            if (cfg.lambda1 > 0.0) terms.push_back({cfg.lambda1, rec_mean});
            if (!per_terms.empty()) {
                nn::Var per_mean = nn::stack_mean(per_terms);
                per_val = per_mean->value[0];
                terms.push_back({cfg.lambda2, per_mean});
            }
            return terms.empty() ? nn::constant(Tensor::zeros({1}))
                                 : nn::weighted_sum(terms);
        };

        SRTrainLogRow row;
        row.iter = iter;
        row.lr = lr;
        try {
            if (cfg.discriminator) {
                std::vector<ImageTensor> refs;
                for (int idx : batch)
                    refs.push_back(pairs[static_cast<size_t>(idx)].reference);
                auto gen_forward = [&]() {
                    std::vector<nn::Var> fakes;
                    for (int idx : batch)
                        fakes.push_back(
                            model.forward_graph(pairs[static_cast<size_t>(idx)].low_res));
                    return fakes;
                };
                const adversarial::AlternatingResult ar = adversarial::alternating_step(
                    *cfg.discriminator, *disc_opt, lr, opt, lr, gen_forward, refs,
                    non_adv, cfg.lambda3);
                row.l_adv = ar.l_adv;
                row.l_d = ar.l_d;
            } else {
                std::vector<nn::Var> fakes;
                for (int idx : batch)
                    fakes.push_back(
                        model.forward_graph(pairs[static_cast<size_t>(idx)].low_res));
                nn::Var total = non_adv(fakes);
                if (!std::isfinite(total->value[0]))
                    throw DivergenceError("stage-2 loss became non-finite at iteration " +
                                          std::to_string(iter));
                nn::backward(total);
                opt.step(lr);
                opt.zero_grad();
            }
        } catch (const DivergenceError&) {
            last.flush(model, sink, 2);
            throw;
        }

        row.l_rec = rec_val;
        row.l_per = per_val;
        row.total = cfg.lambda1 * rec_val + cfg.lambda2 * per_val +
                    cfg.lambda3 * row.l_adv;
        log.push_back(row);
        last.capture(model, opt, iter, 2);
        sink_save(model, opt, iter, 2, sink, iter == sched.total_iters);
    }
    return log;
}

double psnr(const ImageTensor& a, const ImageTensor& b) {
    if (!a.tensor().same_shape(b.tensor()))
        throw DimensionError("PSNR needs matching shapes");
    double mse = 0.0;
    for (int64_t i = 0; i < a.tensor().numel(); ++i) {
        const double d = a.tensor()[i] - b.tensor()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.tensor().numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

} // namespace perceptlab::srharness
