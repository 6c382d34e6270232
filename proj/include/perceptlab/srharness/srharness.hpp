#pragma once

#include <string>
#include <vector>

#include "perceptlab/core/types.hpp"
#include "perceptlab/nn/adam.hpp"
#include "perceptlab/nn/graph.hpp"
#include "perceptlab/objective/objective.hpp"

namespace perceptlab::srharness {

struct SRModelSpec {
    std::string name = "builtin-tiny-sr"; // or "file"
    int scale = 4;
    int channels = 16; // residual width (builtin)
    int blocks = 3;    // residual blocks (builtin)
    std::string weight_path; // file source
    uint64_t init_seed = 0;
};

struct TrainSchedule {
    int stage = 1;
    int total_iters = 0;
    double initial_lr = 0.0;
    std::vector<int> decay_steps; // halving points, strictly increasing, < total
    int batch_size = 0;
};

void validate_schedule(const TrainSchedule& s);
double lr_at(const TrainSchedule& s, int iter);

TrainSchedule paper_stage1_schedule(); // 100K iters, lr 2e-4
TrainSchedule paper_stage2_schedule(); // 400K iters, halved at 150K/300K/350K/375K
TrainSchedule desk_stage1_schedule();  // 2K iters
TrainSchedule desk_stage2_schedule();  // 3K iters, same decay fractions

struct SRDatasetSpec {
    std::string reference_dir;
    int scale = 4;
    std::string split = "train";
};

struct SRPair {
    ImageTensor low_res;
    ImageTensor reference;
};

// low_res = bicubic_downsample(reference, scale); sorted file list shuffled
// by a seed-derived stream. Non-divisible images are skipped with a warning.
std::vector<SRPair> make_pairs(const SRDatasetSpec& dataset, uint64_t seed);

// Residual conv upsampler: 3x3 head, `blocks` residual blocks, conv +
// pixel-shuffle upsampling, zero-initialized tail, and a bicubic skip from
// the input -- so the untrained model is exactly bicubic upsampling.
class SRModel {
public:
    explicit SRModel(const SRModelSpec& spec);

    const SRModelSpec& spec() const { return spec_; }
    std::vector<nn::Var> params() const;
    nn::Var forward_graph(const ImageTensor& low_res) const;
    ImageTensor infer(const ImageTensor& low_res) const; // clamped to [0,1]

    void save_weights(nn::WeightFile& wf, const std::string& prefix) const;
    void load_weights(const nn::WeightFile& wf, const std::string& prefix);
    void snap_f32();

private:
    SRModelSpec spec_;
    nn::Var head_w_, head_b_;
    std::vector<nn::Var> block_params_; // conv1.w, conv1.b, conv2.w, conv2.b per block
    nn::Var up_w_, up_b_;
    nn::Var tail_w_, tail_b_;
};

struct SRTrainLogRow {
    int iter = 0;
    double lr = 0.0;
    double l_rec = 0.0;
    double l_per = 0.0;
    double l_adv = 0.0;
    double l_d = 0.0;
    double total = 0.0;
};

void write_training_log(const std::string& path, const std::vector<SRTrainLogRow>& log);

// optional on-disk checkpointing; on divergence the last good state is
// flushed here before the error propagates
struct CheckpointSink {
    std::string weights_path;
    std::string sidecar_path;
    int every = 0; // also saved on completion when nonzero or paths set
};

// checkpoint files: weight container (model + optimizer) + JSON sidecar
void save_sr_checkpoint(const SRModel& model, const nn::Adam& opt, int64_t iter,
                        int stage, const std::string& weights_path,
                        const std::string& sidecar_path);
SRModel load_sr_model(const std::string& weights_path, const std::string& sidecar_path,
                      int64_t* iter = nullptr, int* stage = nullptr);
// restores optimizer state for resuming; opt must already wrap model.params()
void load_sr_optimizer(nn::Adam& opt, const std::string& weights_path);

std::vector<SRTrainLogRow> train_stage1(SRModel& model, nn::Adam& opt,
                                        const std::vector<SRPair>& pairs,
                                        const TrainSchedule& sched, uint64_t seed,
                                        int start_iter = 0,
                                        const CheckpointSink& sink = {});

// uses alternating_step when a discriminator is configured; otherwise a
// plain composite step. Logs per-component losses each iteration.
std::vector<SRTrainLogRow> train_stage2(SRModel& model, nn::Adam& opt,
                                        const objective::ObjectiveConfig& cfg,
                                        nn::Adam* disc_opt,
                                        const std::vector<SRPair>& pairs,
                                        const TrainSchedule& sched, uint64_t seed,
                                        int start_iter = 0,
                                        const CheckpointSink& sink = {});

double psnr(const ImageTensor& a, const ImageTensor& b);

} // namespace perceptlab::srharness
