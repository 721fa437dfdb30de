#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blockdiff/decoding.hpp"
#include "blockdiff/layout.hpp"
#include "blockdiff/model.hpp"

namespace blockdiff {

enum class WeightMode { Uniform, StepProportional };

std::string to_string(WeightMode m);
WeightMode weight_mode_from_string(const std::string& s);

struct DistillConfig {
    double tau = 0.9;  // commit-confidence threshold of the teacher trajectory
    WeightMode weight_mode = WeightMode::StepProportional;
    double eos_ce_weight = 1.0;
    KlDirection kl_direction = KlDirection::Forward;
    int max_blocks = 4;
    int block_size = 8;

    void validate() const;
};

struct TrainConfig {
    double lr = 1e-3;
    int steps = 100;
    int batch_size = 8;
    uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // global-norm clip; <= 0 disables

    void validate() const;
};

// Stitched non-factorized teacher supervision for one trajectory: for every
// position, the distribution recorded at the step that committed it, the
// committed token, and the unmask step. Positions after the first eos are
// forced to pad and excluded from the distillation loss.
struct DcdTarget {
    struct Block {
        std::vector<std::vector<double>> dist;  // [B x V]
        std::vector<int> committed;
        std::vector<int> unmask_step;  // 1-based
        std::vector<uint8_t> supervised;
        int total_steps = 0;
    };
    std::vector<Block> blocks;
    int block_size = 0;
    int eos_id = -1;
    bool terminated = false;

    std::vector<std::vector<int>> committed_blocks() const;
};

struct TrajectoryResult {
    std::optional<DcdTarget> target;  // absent when the sample was discarded
    std::vector<int> decoded;         // truncated decoded tokens
    FlopsLedger ledger;
};

// True iff some contiguous 4-gram repeats at least 3 times back to back, or
// the sequence reached the budget without emitting eos.
bool detect_repetition(const std::vector<int>& tokens, int eos_id, int budget);

// Algorithm "phase 1": run the teacher's confidence-heuristic remasking
// trajectory (over the fused-cache decode path) and record the committed
// distributions. Returns no target when the repetition filter fires.
TrajectoryResult collect_teacher_trajectory(const ModelParams& teacher,
                                            const std::vector<int>& context,
                                            const DistillConfig& cfg, const Vocabulary& vocab);

// Same collection against an arbitrary backend (scripted teachers in tests).
TrajectoryResult collect_trajectory_with_backend(BlockQueryBackend& backend,
                                                 const DistillConfig& cfg, const Vocabulary& vocab);

// Scalar losses with gradient accumulation into `grads` (pass nullptr to
// skip the backward pass).
double ar_loss(const ModelParams& params, const SequenceLayout& layout, ModelParams* grads);
double rad_loss(const ModelParams& params, const SequenceLayout& layout, ModelParams* grads);

struct DcdLossParts {
    double total = 0.0;
    double kl = 0.0;
    double eos_ce = 0.0;
};

// Weighted KL between the stitched teacher target and the student's one-step
// prediction, plus the eos cross-entropy term. Step-proportional weights are
// s_i / S_n rescaled to mean 1 per block; the KL part is a weighted mean over
// supervised positions.
DcdLossParts dcd_loss(const ModelParams& student, const DcdTarget& target,
                      const SequenceLayout& layout, const DistillConfig& cfg, ModelParams* grads);

// Hard-label baseline: plain cross-entropy of the student's one-step logits
// against the committed tokens (no distribution matching, no weighting).
double trajectory_ce_loss(const ModelParams& student, const DcdTarget& target,
                          const SequenceLayout& layout, const DistillConfig& cfg,
                          ModelParams* grads);

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    int64_t t = 0;
};

AdamState make_adam_state(const ModelConfig& cfg);

// Adam with global-norm gradient clipping. Throws TrainError (naming the
// parameter) on non-finite gradients.
void optimizer_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                    const TrainConfig& cfg);

// DCD alignment layout for a collected trajectory; asserts the phase-1 /
// phase-2 conditioning identity (clean blocks == committed blocks).
SequenceLayout dcd_layout_for_target(const std::vector<int>& context, const DcdTarget& target,
                                     const Vocabulary& vocab, int max_positions);

}  // namespace blockdiff
