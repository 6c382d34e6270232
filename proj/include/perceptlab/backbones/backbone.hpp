#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "perceptlab/core/rng.hpp"
#include "perceptlab/core/types.hpp"
#include "perceptlab/nn/graph.hpp"
#include "perceptlab/nn/weights.hpp"

namespace perceptlab::backbones {

enum class WeightSource { BuiltinTiny, BuiltinRandomFixed, File };

struct StageLayout {
    int channels = 0;
    int downsample = 2;
};

struct BackboneSpec {
    std::string name;
    std::vector<StageLayout> stage_layout; // stages 1..m; stage 0 is the raw image
    WeightSource weight_source = WeightSource::BuiltinTiny;
    std::string weight_path;  // File source
    uint64_t init_seed = 0;   // BuiltinRandomFixed source
    bool frozen = true;
    int min_input = 8; // minimum height and width
};

// the two always-registered desk-scale specs
BackboneSpec tiny_spec();
BackboneSpec tiny_random_spec(uint64_t seed = 0x7ab2d015u);

// Runtime form: one 3x3 conv (stride = stage downsample, pad 1) + ReLU per
// stage. Weights live as graph parameter nodes so a trainable backbone (GAN
// discriminator, NR head) shares them with its optimizer; the fast tensor
// path reads the same storage.
class Backbone {
public:
    explicit Backbone(const BackboneSpec& spec); // File source may throw ConfigError

    const BackboneSpec& spec() const { return spec_; }
    int num_stages() const { return static_cast<int>(spec_.stage_layout.size()); }

    FeaturePyramid extract(const ImageTensor& img) const;
    // graph forward; returns stages 0..m (stage 0 = the input var)
    std::vector<nn::Var> forward_graph(const nn::Var& img) const;

    std::vector<nn::Var> params() const; // empty when frozen
    void save_weights(nn::WeightFile& wf, const std::string& prefix) const;
    void load_weights(const nn::WeightFile& wf, const std::string& prefix);
    void snap_f32();
    uint64_t weight_hash() const;

private:
    void check_input(const ImageTensor& img) const;

    BackboneSpec spec_;
    std::vector<nn::Var> stage_w_, stage_b_;
};

// spec-level convenience matching the module contract
FeaturePyramid extract_features(const BackboneSpec& spec, const ImageTensor& img);

// process-wide registry; "tiny" and "tiny-random" are always present
class BackboneRegistry {
public:
    static BackboneRegistry& instance();

    const BackboneSpec& register_spec(BackboneSpec spec); // RegistryError on duplicate
    const BackboneSpec& get(const std::string& name) const;
    bool has(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    BackboneRegistry();
    std::deque<BackboneSpec> specs_; // stable references across registrations
};

} // namespace perceptlab::backbones
