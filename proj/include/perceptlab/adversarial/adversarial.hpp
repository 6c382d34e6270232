#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "perceptlab/backbones/backbone.hpp"
#include "perceptlab/core/types.hpp"
#include "perceptlab/nn/adam.hpp"
#include "perceptlab/nn/graph.hpp"

namespace perceptlab::adversarial {

enum class HeadType { Vanilla, Patch };

struct DiscriminatorSpec {
    backbones::BackboneSpec backbone; // forced trainable on construction
    HeadType head = HeadType::Vanilla;
    int patch_rows = 0; // required positive for patch heads
    int patch_cols = 0;
    uint64_t head_seed = 0;
};

struct DiscriminatorOutput {
    Tensor logits; // shape (1) for vanilla, (rows, cols) for patch
};

struct AdvBatch {
    std::vector<ImageTensor> generated; // x ~ X
    std::vector<ImageTensor> real;      // y ~ Y

    AdvBatch(std::vector<ImageTensor> gen, std::vector<ImageTensor> re);
};

// Backbone plus head: global pooling + linear for vanilla, 1x1 conv over the
// final stage for patch. Patch spatial dims must match the declared grid.
class Discriminator {
public:
    explicit Discriminator(const DiscriminatorSpec& spec);

    const DiscriminatorSpec& spec() const { return spec_; }
    backbones::Backbone& backbone() { return *backbone_; }
    const backbones::Backbone& backbone() const { return *backbone_; }

    DiscriminatorOutput discriminate(const ImageTensor& img) const;
    nn::Var forward_graph(const nn::Var& img) const; // (1) or (1,rows,cols)

    std::vector<nn::Var> params() const;
    void save_weights(nn::WeightFile& wf, const std::string& prefix) const;
    void load_weights(const nn::WeightFile& wf, const std::string& prefix);
    void snap_f32();

private:
    DiscriminatorSpec spec_;
    std::unique_ptr<backbones::Backbone> backbone_;
    nn::Var head_w_, head_b_;
};

// Eq. 6: D = sigmoid(d(x) - E[d(y)]), elementwise over locations
Tensor batch_mean_logits(const std::vector<Tensor>& logits);
Tensor relativistic_discrepancy(const Tensor& logits, const Tensor& opposing_mean);

// Eqs. 4-5 from raw logit batches; patch maps average per-location losses.
// Log arguments are clamped to >= 1e-12.
double generator_loss_from_logits(const std::vector<Tensor>& fake_logits,
                                  const std::vector<Tensor>& real_logits);
double discriminator_loss_from_logits(const std::vector<Tensor>& fake_logits,
                                      const std::vector<Tensor>& real_logits);

double generator_loss(const AdvBatch& batch, const Discriminator& disc);
double discriminator_loss(const AdvBatch& batch, const Discriminator& disc);

nn::Var generator_loss_graph(const std::vector<nn::Var>& fake_logits,
                             const std::vector<nn::Var>& real_logits);
nn::Var discriminator_loss_graph(const std::vector<nn::Var>& fake_logits,
                                 const std::vector<nn::Var>& real_logits);

struct AlternatingResult {
    double l_adv = 0.0; // generator-side loss after the discriminator update
    double l_d = 0.0;   // discriminator loss before its update
};

// One discriminator update on l_d (generator outputs detached), then one
// generator update on non_adv_loss(fake) + lambda3 * l_adv. gen_forward must
// return the fake-image graph attached to the generator's parameters;
// non_adv_loss builds the remaining composite terms over those same nodes.
// Aborts (DivergenceError) when a loss is non-finite or exceeds 1e4.
AlternatingResult alternating_step(
    Discriminator& disc, nn::Adam& disc_opt, double disc_lr, nn::Adam& gen_opt,
    double gen_lr, const std::function<std::vector<nn::Var>()>& gen_forward,
    const std::vector<ImageTensor>& real_images,
    const std::function<nn::Var(const std::vector<nn::Var>&)>& non_adv_loss,
    double lambda3);

// checkpoint: weight container + JSON sidecar (backbone layout, head, grid,
// training step)
void save_discriminator(const Discriminator& disc, int64_t step,
                        const std::string& weights_path,
                        const std::string& sidecar_path);
Discriminator load_discriminator(const std::string& weights_path,
                                 const std::string& sidecar_path,
                                 int64_t* step = nullptr);

// strip the head from a checkpoint; result loads as a backbones weight file
nn::WeightFile extract_disc_backbone(const std::string& weights_path,
                                     const std::string& sidecar_path);

} // namespace perceptlab::adversarial
