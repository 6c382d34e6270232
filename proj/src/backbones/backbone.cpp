#include "perceptlab/backbones/backbone.hpp"

#include <cmath>
#include <filesystem>

#include "perceptlab/nn/kernels.hpp"

namespace perceptlab::backbones {

namespace {

// fixed seed baking the builtin-tiny weights; never derived from experiment
// seeds so "tiny" means the same network everywhere
constexpr uint64_t kTinySeed = 0x3f91c5a268d04b17ull;

Tensor init_conv(Rng& rng, int cout, int cin, int k, double stddev) {
    Tensor w({cout, cin, k, k});
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.truncated_normal(stddev);
    return w;
}

} // namespace

BackboneSpec tiny_spec() {
    BackboneSpec s;
    s.name = "tiny";
    s.stage_layout = {{16, 2}, {32, 2}, {64, 2}};
    s.weight_source = WeightSource::BuiltinTiny;
    s.frozen = true;
    s.min_input = 8;
    return s;
}

BackboneSpec tiny_random_spec(uint64_t seed) {
    BackboneSpec s = tiny_spec();
    s.name = "tiny-random";
    s.weight_source = WeightSource::BuiltinRandomFixed;
    s.init_seed = seed;
    return s;
}

Backbone::Backbone(const BackboneSpec& spec) : spec_(spec) {
    if (spec_.stage_layout.empty()) throw ConfigError("backbone has no stages");
    for (const auto& st : spec_.stage_layout)
        if (st.channels <= 0 || st.downsample <= 0)
            throw ConfigError("backbone stage layout entries must be positive");

    nn::WeightFile file;
    if (spec_.weight_source == WeightSource::File) {
        if (!std::filesystem::exists(spec_.weight_path))
            throw ConfigError("backbone weight file missing: " + spec_.weight_path);
        file = nn::WeightFile::load(spec_.weight_path);
    }

    int cin = 3;
    for (size_t i = 0; i < spec_.stage_layout.size(); ++i) {
        const int cout = spec_.stage_layout[i].channels;
        const std::string id = "stage" + std::to_string(i + 1);
        Tensor w, b;
        switch (spec_.weight_source) {
            case WeightSource::BuiltinTiny: {
                // He-style scale, truncated at 2 std
                Rng rng(derive_seed(kTinySeed, id));
                w = init_conv(rng, cout, cin, 3, std::sqrt(2.0 / (cin * 9.0)));
                b = Tensor::zeros({cout});
                break;
            }
            case WeightSource::BuiltinRandomFixed: {
                Rng rng(derive_seed(spec_.init_seed, "backbone." + id));
                w = init_conv(rng, cout, cin, 3, 0.02);
                b = Tensor::zeros({cout});
                break;
            }
            case WeightSource::File: {
                w = file.get(id + ".w");
                b = file.get(id + ".b");
                const std::vector<int> want{cout, cin, 3, 3};
                if (w.shape() != want || b.ndim() != 1 || b.dim(0) != cout)
                    throw ConfigError("backbone weight file does not match layout at " +
                                      id + " (got " + w.shape_str() + ")");
                break;
            }
        }
        auto wv = nn::parameter(std::move(w), "backbone." + id + ".w");
        auto bv = nn::parameter(std::move(b), "backbone." + id + ".b");
        if (spec_.frozen) {
            wv->requires_grad = bv->requires_grad = false;
            wv->needs_grad = bv->needs_grad = false;
        }
        stage_w_.push_back(std::move(wv));
        stage_b_.push_back(std::move(bv));
        cin = cout;
    }
}

void Backbone::check_input(const ImageTensor& img) const {
    if (img.channels() != 3)
        throw DimensionError("backbone '" + spec_.name + "' expects 3-channel input");
    if (img.height() < spec_.min_input || img.width() < spec_.min_input)
        throw DimensionError("input " + std::to_string(img.height()) + "x" +
                             std::to_string(img.width()) + " below backbone minimum " +
                             std::to_string(spec_.min_input));
}

FeaturePyramid Backbone::extract(const ImageTensor& img) const {
    check_input(img);
    FeaturePyramid pyr;
    pyr.stages.push_back(img.tensor());
    Tensor cur = img.tensor();
    for (size_t i = 0; i < stage_w_.size(); ++i) {
        const int stride = spec_.stage_layout[i].downsample;
        const auto d = kernels::conv2d_dims(cur, stage_w_[i]->value, stride, 1);
        Tensor y({d.cout, d.oh, d.ow});
        kernels::conv2d_forward(cur, stage_w_[i]->value, stage_b_[i]->value, stride, 1, y);
        for (int64_t j = 0; j < y.numel(); ++j)
            if (y[j] < 0.0) y[j] = 0.0;
        pyr.stages.push_back(y);
        cur = std::move(y);
    }
    return pyr;
}

std::vector<nn::Var> Backbone::forward_graph(const nn::Var& img) const {
    std::vector<nn::Var> stages;
    stages.push_back(img);
    nn::Var cur = img;
    for (size_t i = 0; i < stage_w_.size(); ++i) {
        cur = nn::relu(nn::conv2d(cur, stage_w_[i], stage_b_[i],
                                  spec_.stage_layout[i].downsample, 1));
        stages.push_back(cur);
    }
    return stages;
}

std::vector<nn::Var> Backbone::params() const {
    std::vector<nn::Var> out;
    if (spec_.frozen) return out;
    for (size_t i = 0; i < stage_w_.size(); ++i) {
        out.push_back(stage_w_[i]);
        out.push_back(stage_b_[i]);
    }
    return out;
}

void Backbone::save_weights(nn::WeightFile& wf, const std::string& prefix) const {
    for (size_t i = 0; i < stage_w_.size(); ++i) {
        const std::string id = prefix + "stage" + std::to_string(i + 1);
        wf.put(id + ".w", stage_w_[i]->value);
        wf.put(id + ".b", stage_b_[i]->value);
    }
}

void Backbone::load_weights(const nn::WeightFile& wf, const std::string& prefix) {
    for (size_t i = 0; i < stage_w_.size(); ++i) {
        const std::string id = prefix + "stage" + std::to_string(i + 1);
        Tensor w = wf.get(id + ".w");
        Tensor b = wf.get(id + ".b");
        if (!w.same_shape(stage_w_[i]->value) || !b.same_shape(stage_b_[i]->value))
            throw ConfigError("backbone weights at " + id + " have shape " +
                              w.shape_str() + ", expected " +
                              stage_w_[i]->value.shape_str());
        stage_w_[i]->value = std::move(w);
        stage_b_[i]->value = std::move(b);
    }
}

void Backbone::snap_f32() {
    for (auto& w : stage_w_) nn::f32_snap(w->value);
    for (auto& b : stage_b_) nn::f32_snap(b->value);
}

uint64_t Backbone::weight_hash() const {
    nn::WeightFile wf;
    save_weights(wf, "");
    return wf.content_hash();
}

FeaturePyramid extract_features(const BackboneSpec& spec, const ImageTensor& img) {
    return Backbone(spec).extract(img);
}

BackboneRegistry& BackboneRegistry::instance() {
    static BackboneRegistry reg;
    return reg;
}

BackboneRegistry::BackboneRegistry() {
    specs_.push_back(tiny_spec());
    specs_.push_back(tiny_random_spec());
}

const BackboneSpec& BackboneRegistry::register_spec(BackboneSpec spec) {
    if (spec.name.empty()) throw RegistryError("backbone spec needs a name");
    if (has(spec.name)) throw RegistryError("backbone '" + spec.name + "' already registered");
    specs_.push_back(std::move(spec));
    return specs_.back();
}

const BackboneSpec& BackboneRegistry::get(const std::string& name) const {
    for (const auto& s : specs_)
        if (s.name == name) return s;
    throw RegistryError("no backbone named '" + name + "'");
}

bool BackboneRegistry::has(const std::string& name) const {
    for (const auto& s : specs_)
        if (s.name == name) return true;
    return false;
}

std::vector<std::string> BackboneRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& s : specs_) out.push_back(s.name);
    return out;
}

} // namespace perceptlab::backbones
