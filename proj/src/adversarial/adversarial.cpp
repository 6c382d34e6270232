#include "perceptlab/adversarial/adversarial.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "perceptlab/core/rng.hpp"
#include "perceptlab/nn/kernels.hpp"

namespace perceptlab::adversarial {

namespace {

constexpr double kLogFloor = 1e-12;
constexpr double kDivergenceCeiling = 1e4;

double clamped_log(double v) { return std::log(v > kLogFloor ? v : kLogFloor); }

void check_logit_batches(const std::vector<Tensor>& fake, const std::vector<Tensor>& real) {
    if (fake.empty() || real.empty())
        throw DomainError("adversarial losses need nonempty logit batches");
    for (const auto& t : fake)
        if (!t.same_shape(fake[0])) throw DimensionError("ragged fake logit batch");
    for (const auto& t : real)
        if (!t.same_shape(real[0])) throw DimensionError("ragged real logit batch");
    if (!fake[0].same_shape(real[0]))
        throw DimensionError("fake and real logit shapes differ: " +
                             fake[0].shape_str() + " vs " + real[0].shape_str());
}

// shared core of Eqs. 4-5; disc_side picks which side gets log D vs log(1-D)
double relativistic_loss_value(const std::vector<Tensor>& fake,
                               const std::vector<Tensor>& real, bool disc_side) {
    check_logit_batches(fake, real);
    const Tensor mean_fake = batch_mean_logits(fake);
    const Tensor mean_real = batch_mean_logits(real);
    const int64_t n = mean_fake.numel();

    double real_term = 0.0;
    for (const auto& y : real) {
        double acc = 0.0;
        for (int64_t p = 0; p < n; ++p) {
            const double d = 1.0 / (1.0 + std::exp(-(y[p] - mean_fake[p])));
            acc += clamped_log(disc_side ? d : 1.0 - d);
        }
        real_term += acc / static_cast<double>(n);
    }
    real_term /= static_cast<double>(real.size());

    double fake_term = 0.0;
    for (const auto& x : fake) {
        double acc = 0.0;
        for (int64_t p = 0; p < n; ++p) {
            const double d = 1.0 / (1.0 + std::exp(-(x[p] - mean_real[p])));
            acc += clamped_log(disc_side ? 1.0 - d : d);
        }
        fake_term += acc / static_cast<double>(n);
    }
    fake_term /= static_cast<double>(fake.size());

    return -real_term - fake_term;
}

nn::Var one_minus(const nn::Var& v) { return nn::add_scalar(nn::neg(v), 1.0); }

nn::Var relativistic_loss_graph(const std::vector<nn::Var>& fake,
                                const std::vector<nn::Var>& real, bool disc_side) {
    if (fake.empty() || real.empty())
        throw DomainError("adversarial losses need nonempty logit batches");
    const nn::Var mean_fake = nn::stack_mean(fake);
    const nn::Var mean_real = nn::stack_mean(real);

    std::vector<nn::Var> real_terms, fake_terms;
    for (const auto& y : real) {
        nn::Var d = nn::sigmoid(nn::sub(y, mean_fake));
        if (!disc_side) d = one_minus(d);
        real_terms.push_back(nn::mean_all(nn::log_clamped(d, kLogFloor)));
    }
    for (const auto& x : fake) {
        nn::Var d = nn::sigmoid(nn::sub(x, mean_real));
        if (disc_side) d = one_minus(d);
        fake_terms.push_back(nn::mean_all(nn::log_clamped(d, kLogFloor)));
    }
    return nn::weighted_sum(
        {{-1.0, nn::stack_mean(real_terms)}, {-1.0, nn::stack_mean(fake_terms)}});
}

void guard(double loss, const char* what) {
    if (!std::isfinite(loss) || loss > kDivergenceCeiling)
        throw DivergenceError(std::string(what) + " diverged (value " +
                              std::to_string(loss) + ")");
}

} // namespace

AdvBatch::AdvBatch(std::vector<ImageTensor> gen, std::vector<ImageTensor> re)
    : generated(std::move(gen)), real(std::move(re)) {
    if (generated.empty() || real.empty())
        throw DomainError("AdvBatch sides must be nonempty");
    if (generated.size() != real.size())
        throw DimensionError("AdvBatch sides must have equal batch sizes");
}

Discriminator::Discriminator(const DiscriminatorSpec& spec) : spec_(spec) {
    spec_.backbone.frozen = false; // discriminator backbones always train
    if (spec_.head == HeadType::Patch && (spec_.patch_rows <= 0 || spec_.patch_cols <= 0))
        throw ConfigError("patch discriminator needs a positive patch_grid");
    backbone_ = std::make_unique<backbones::Backbone>(spec_.backbone);

    const int c = spec_.backbone.stage_layout.back().channels;
    Rng rng(derive_seed(spec_.head_seed, "disc.head"));
    const double stddev = std::sqrt(2.0 / c);
    if (spec_.head == HeadType::Vanilla) {
        Tensor w({c});
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.truncated_normal(stddev);
        head_w_ = nn::parameter(std::move(w), "head.w");
        head_b_ = nn::parameter(Tensor::zeros({1}), "head.b");
    } else {
        Tensor w({1, c, 1, 1});
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.truncated_normal(stddev);
        head_w_ = nn::parameter(std::move(w), "head.w");
        head_b_ = nn::parameter(Tensor::zeros({1}), "head.b");
    }
}

DiscriminatorOutput Discriminator::discriminate(const ImageTensor& img) const {
    const FeaturePyramid pyr = backbone_->extract(img);
    const Tensor& top = pyr.stages.back();
    DiscriminatorOutput out;
    if (spec_.head == HeadType::Vanilla) {
        const int c = top.dim(0);
        std::vector<double> means(c), vars(c);
        kernels::stage_moments(top, means.data(), vars.data());
        double logit = head_b_->value[0];
        for (int j = 0; j < c; ++j) logit += means[j] * head_w_->value[j];
        out.logits = Tensor({1});
        out.logits[0] = logit;
    } else {
        if (top.dim(1) != spec_.patch_rows || top.dim(2) != spec_.patch_cols)
            throw DimensionError("input yields a " + std::to_string(top.dim(1)) + "x" +
                                 std::to_string(top.dim(2)) +
                                 " patch map; spec declares " +
                                 std::to_string(spec_.patch_rows) + "x" +
                                 std::to_string(spec_.patch_cols));
        Tensor map({1, spec_.patch_rows, spec_.patch_cols});
        kernels::conv2d_forward(top, head_w_->value, head_b_->value, 1, 0, map);
        out.logits = Tensor({spec_.patch_rows, spec_.patch_cols});
        for (int64_t i = 0; i < map.numel(); ++i) out.logits[i] = map[i];
    }
    if (!out.logits.all_finite())
        throw DivergenceError("discriminator produced non-finite logits");
    return out;
}

nn::Var Discriminator::forward_graph(const nn::Var& img) const {
    const std::vector<nn::Var> stages = backbone_->forward_graph(img);
    const nn::Var& top = stages.back();
    if (spec_.head == HeadType::Vanilla)
        return nn::dot_bias(nn::global_avg_pool(top), head_w_, head_b_);
    if (top->value.dim(1) != spec_.patch_rows || top->value.dim(2) != spec_.patch_cols)
        throw DimensionError("input yields a " + std::to_string(top->value.dim(1)) + "x" +
                             std::to_string(top->value.dim(2)) +
                             " patch map; spec declares " +
                             std::to_string(spec_.patch_rows) + "x" +
                             std::to_string(spec_.patch_cols));
    return nn::conv2d(top, head_w_, head_b_, 1, 0);
}

std::vector<nn::Var> Discriminator::params() const {
    std::vector<nn::Var> out = backbone_->params();
    out.push_back(head_w_);
    out.push_back(head_b_);
    return out;
}

void Discriminator::save_weights(nn::WeightFile& wf, const std::string& prefix) const {
    backbone_->save_weights(wf, prefix + "backbone.");
    wf.put(prefix + "head.w", head_w_->value);
    wf.put(prefix + "head.b", head_b_->value);
}

void Discriminator::load_weights(const nn::WeightFile& wf, const std::string& prefix) {
    backbone_->load_weights(wf, prefix + "backbone.");
    Tensor w = wf.get(prefix + "head.w");
    Tensor b = wf.get(prefix + "head.b");
    if (!w.same_shape(head_w_->value) || !b.same_shape(head_b_->value))
        throw ConfigError("discriminator head weights do not match spec");
    head_w_->value = std::move(w);
    head_b_->value = std::move(b);
}

void Discriminator::snap_f32() {
    backbone_->snap_f32();
    nn::f32_snap(head_w_->value);
    nn::f32_snap(head_b_->value);
}

Tensor batch_mean_logits(const std::vector<Tensor>& logits) {
    if (logits.empty()) throw DomainError("empty logit batch");
    Tensor mean = Tensor::zeros(logits[0].shape());
    for (const auto& t : logits) {
        if (!t.same_shape(mean)) throw DimensionError("ragged logit batch");
        for (int64_t i = 0; i < mean.numel(); ++i) mean[i] += t[i];
    }
    for (int64_t i = 0; i < mean.numel(); ++i)
        mean[i] /= static_cast<double>(logits.size());
    return mean;
}

Tensor relativistic_discrepancy(const Tensor& logits, const Tensor& opposing_mean) {
    if (!logits.same_shape(opposing_mean))
        throw DimensionError("logits and opposing mean must share a shape");
    Tensor d(logits.shape());
    for (int64_t i = 0; i < d.numel(); ++i)
        d[i] = 1.0 / (1.0 + std::exp(-(logits[i] - opposing_mean[i])));
    return d;
}

double generator_loss_from_logits(const std::vector<Tensor>& fake_logits,
                                  const std::vector<Tensor>& real_logits) {
    return relativistic_loss_value(fake_logits, real_logits, false);
}

double discriminator_loss_from_logits(const std::vector<Tensor>& fake_logits,
                                      const std::vector<Tensor>& real_logits) {
    return relativistic_loss_value(fake_logits, real_logits, true);
}

namespace {

std::vector<Tensor> batch_logits(const std::vector<ImageTensor>& imgs,
                                 const Discriminator& disc) {
    std::vector<Tensor> out;
    out.reserve(imgs.size());
    for (const auto& img : imgs) out.push_back(disc.discriminate(img).logits);
    return out;
}

} // namespace

double generator_loss(const AdvBatch& batch, const Discriminator& disc) {
    return generator_loss_from_logits(batch_logits(batch.generated, disc),
                                      batch_logits(batch.real, disc));
}

double discriminator_loss(const AdvBatch& batch, const Discriminator& disc) {
    return discriminator_loss_from_logits(batch_logits(batch.generated, disc),
                                          batch_logits(batch.real, disc));
}

nn::Var generator_loss_graph(const std::vector<nn::Var>& fake_logits,
                             const std::vector<nn::Var>& real_logits) {
    return relativistic_loss_graph(fake_logits, real_logits, false);
}

nn::Var discriminator_loss_graph(const std::vector<nn::Var>& fake_logits,
                                 const std::vector<nn::Var>& real_logits) {
    return relativistic_loss_graph(fake_logits, real_logits, true);
}

AlternatingResult alternating_step(
    Discriminator& disc, nn::Adam& disc_opt, double disc_lr, nn::Adam& gen_opt,
    double gen_lr, const std::function<std::vector<nn::Var>()>& gen_forward,
    const std::vector<ImageTensor>& real_images,
    const std::function<nn::Var(const std::vector<nn::Var>&)>& non_adv_loss,
    double lambda3) {
    if (real_images.empty()) throw DomainError("alternating_step needs real images");
    if (lambda3 < 0.0) throw ConfigError("lambda3 must be >= 0");

    const std::vector<nn::Var> fake = gen_forward();
    if (fake.size() != real_images.size())
        throw DimensionError("alternating_step batch sides must match");

    std::vector<nn::Var> real_consts;
    real_consts.reserve(real_images.size());
    for (const auto& img : real_images) real_consts.push_back(nn::constant(img.tensor()));

    AlternatingResult res;

    // discriminator phase on detached generator outputs
    {
        std::vector<nn::Var> fake_logits, real_logits;
        for (const auto& f : fake)
            fake_logits.push_back(disc.forward_graph(nn::constant(f->value)));
        for (const auto& r : real_consts) real_logits.push_back(disc.forward_graph(r));
        nn::Var ld = discriminator_loss_graph(fake_logits, real_logits);
        res.l_d = ld->value[0];
        guard(res.l_d, "discriminator loss");
        nn::backward(ld);
        disc_opt.step(disc_lr);
        disc_opt.zero_grad();
    }

    // generator phase on the full composite against the updated discriminator
    {
        std::vector<nn::Var> fake_logits, real_logits;
        for (const auto& f : fake) fake_logits.push_back(disc.forward_graph(f));
        for (const auto& r : real_consts) real_logits.push_back(disc.forward_graph(r));
        nn::Var ladv = generator_loss_graph(fake_logits, real_logits);
        res.l_adv = ladv->value[0];
        guard(res.l_adv, "generator adversarial loss");

        nn::Var total = non_adv_loss(fake);
        if (total->value.numel() != 1)
            throw DimensionError("non_adv_loss must return a scalar");
        if (lambda3 > 0.0)
            total = nn::weighted_sum({{1.0, total}, {lambda3, ladv}});
        guard(total->value[0], "generator composite loss");
        nn::backward(total);
        gen_opt.step(gen_lr);
        gen_opt.zero_grad();
        disc_opt.zero_grad(); // generator backward also reaches disc params
    }
    return res;
}

namespace {

nlohmann::json backbone_json(const backbones::BackboneSpec& spec) {
    nlohmann::json j;
    j["name"] = spec.name;
    j["min_input"] = spec.min_input;
    auto layout = nlohmann::json::array();
    for (const auto& st : spec.stage_layout) layout.push_back({st.channels, st.downsample});
    j["stage_layout"] = layout;
    return j;
}

backbones::BackboneSpec backbone_from_json(const nlohmann::json& j) {
    backbones::BackboneSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.min_input = j.at("min_input").get<int>();
    for (const auto& st : j.at("stage_layout"))
        spec.stage_layout.push_back({st.at(0).get<int>(), st.at(1).get<int>()});
    spec.weight_source = backbones::WeightSource::BuiltinTiny;
    return spec;
}

} // namespace

void save_discriminator(const Discriminator& disc, int64_t step,
                        const std::string& weights_path,
                        const std::string& sidecar_path) {
    nn::WeightFile wf;
    disc.save_weights(wf, "");
    wf.save(weights_path);

    nlohmann::json j;
    j["backbone"] = backbone_json(disc.spec().backbone);
    j["head"] = disc.spec().head == HeadType::Vanilla ? "vanilla" : "patch";
    if (disc.spec().head == HeadType::Patch)
        j["patch_grid"] = {disc.spec().patch_rows, disc.spec().patch_cols};
    j["step"] = step;

    std::ofstream os(sidecar_path);
    if (!os) throw IoError("cannot write discriminator sidecar: " + sidecar_path);
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write failed: " + sidecar_path);
}

namespace {

nlohmann::json read_sidecar(const std::string& sidecar_path) {
    std::ifstream is(sidecar_path);
    if (!is) throw IoError("cannot read discriminator sidecar: " + sidecar_path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("discriminator sidecar is not valid JSON: " + std::string(e.what()));
    }
    return j;
}

DiscriminatorSpec spec_from_sidecar(const nlohmann::json& j) {
    DiscriminatorSpec spec;
    try {
        spec.backbone = backbone_from_json(j.at("backbone"));
        const std::string head = j.at("head").get<std::string>();
        if (head == "vanilla")
            spec.head = HeadType::Vanilla;
        else if (head == "patch")
            spec.head = HeadType::Patch;
        else
            throw ConfigError("unknown discriminator head '" + head + "'");
        if (spec.head == HeadType::Patch) {
            spec.patch_rows = j.at("patch_grid").at(0).get<int>();
            spec.patch_cols = j.at("patch_grid").at(1).get<int>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("discriminator sidecar missing fields: " + std::string(e.what()));
    }
    spec.backbone.frozen = false;
    return spec;
}

} // namespace

Discriminator load_discriminator(const std::string& weights_path,
                                 const std::string& sidecar_path, int64_t* step) {
    const nlohmann::json j = read_sidecar(sidecar_path);
    Discriminator disc(spec_from_sidecar(j));
    const nn::WeightFile wf = nn::WeightFile::load(weights_path);
    try {
        disc.load_weights(wf, "");
    } catch (const IoError& e) {
        throw ConfigError(std::string("checkpoint does not match declared architecture: ") +
                          e.what());
    }
    if (step) *step = j.value("step", int64_t{0});
    return disc;
}

nn::WeightFile extract_disc_backbone(const std::string& weights_path,
                                     const std::string& sidecar_path) {
    const nlohmann::json j = read_sidecar(sidecar_path);
    const DiscriminatorSpec spec = spec_from_sidecar(j);
    const nn::WeightFile wf = nn::WeightFile::load(weights_path);

    nn::WeightFile backbone_only;
    try {
        backbone_only = wf.with_prefix_stripped("backbone.");
    } catch (const IoError& e) {
        throw ConfigError(std::string("checkpoint has no backbone entries: ") + e.what());
    }

    // validate against the declared architecture before handing it out
    int cin = 3;
    for (size_t i = 0; i < spec.backbone.stage_layout.size(); ++i) {
        const std::string id = "stage" + std::to_string(i + 1);
        const int cout = spec.backbone.stage_layout[i].channels;
        if (!backbone_only.has(id + ".w") || !backbone_only.has(id + ".b"))
            throw ConfigError("checkpoint is missing backbone entries for " + id);
        const Tensor w = backbone_only.get(id + ".w");
        const std::vector<int> want{cout, cin, 3, 3};
        if (w.shape() != want)
            throw ConfigError("checkpoint backbone " + id + " has shape " +
                              w.shape_str() + ", declared layout expects (" +
                              std::to_string(cout) + "," + std::to_string(cin) + ",3,3)");
        cin = cout;
    }
    return backbone_only;
}

} // namespace perceptlab::adversarial
