#include "blockdiff/training.hpp"

#include <cmath>

namespace blockdiff {

std::string to_string(WeightMode m) {
    return m == WeightMode::Uniform ? "uniform" : "step_proportional";
}

WeightMode weight_mode_from_string(const std::string& s) {
    if (s == "uniform") return WeightMode::Uniform;
    if (s == "step_proportional") return WeightMode::StepProportional;
    throw ConfigError("unknown weight mode: " + s);
}

void DistillConfig::validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("distill: tau must lie in [0,1]");
    if (eos_ce_weight < 0.0) throw ConfigError("distill: eos_ce_weight must be >= 0");
    if (max_blocks <= 0 || block_size <= 0)
        throw ConfigError("distill: max_blocks and block_size must be positive");
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || eps <= 0.0)
        throw ConfigError("train: bad optimizer constants");
}

std::vector<std::vector<int>> DcdTarget::committed_blocks() const {
    std::vector<std::vector<int>> out;
    for (const Block& b : blocks) out.push_back(b.committed);
    return out;
}

bool detect_repetition(const std::vector<int>& tokens, int eos_id, int budget) {
    bool saw_eos = false;
    for (int t : tokens)
        if (t == eos_id) saw_eos = true;
    if (!saw_eos && static_cast<int>(tokens.size()) >= budget) return true;
    constexpr size_t kGram = 4;
    constexpr int kRuns = 3;
    if (tokens.size() >= kGram * kRuns) {
        for (size_t i = 0; i + kGram * kRuns <= tokens.size(); ++i) {
            bool all = true;
            for (size_t r = 1; r < kRuns && all; ++r)
                for (size_t j = 0; j < kGram; ++j)
                    if (tokens[i + j] != tokens[i + r * kGram + j]) {
                        all = false;
                        break;
                    }
            if (all) return true;
        }
    }
    return false;
}

TrajectoryResult collect_trajectory_with_backend(BlockQueryBackend& backend,
                                                 const DistillConfig& cfg,
                                                 const Vocabulary& vocab) {
    cfg.validate();
    BlockRunResult run = run_block_commit_loop(backend, cfg.max_blocks, cfg.block_size, cfg.tau,
                                               vocab.eos_id, vocab.mask_id,
                                               /*record_dists=*/true);
    TrajectoryResult out;
    for (size_t n = 0; n < run.blocks.size(); ++n) {
        for (int i = 0; i < cfg.block_size; ++i) {
            out.decoded.push_back(run.blocks[n][static_cast<size_t>(i)]);
            if (run.terminated && static_cast<int>(n) == run.eos_block && i == run.eos_pos) break;
        }
    }
    if (detect_repetition(out.decoded, vocab.eos_id, cfg.max_blocks * cfg.block_size)) {
        return out;  // discarded: no target
    }
    DcdTarget target;
    target.block_size = cfg.block_size;
    target.eos_id = vocab.eos_id;
    target.terminated = run.terminated;
    bool past_eos = false;
    for (size_t n = 0; n < run.blocks.size(); ++n) {
        DcdTarget::Block blk;
        blk.dist = std::move(run.dists[n]);
        blk.committed = run.blocks[n];
        blk.unmask_step = run.steps[n];
        blk.total_steps = run.total_steps[n];
        blk.supervised.assign(static_cast<size_t>(cfg.block_size), 1);
        for (int i = 0; i < cfg.block_size; ++i) {
            if (past_eos) {
                // after the first eos supervision stops; pseudo labels become pad
                blk.committed[static_cast<size_t>(i)] = vocab.pad_id;
                blk.supervised[static_cast<size_t>(i)] = 0;
            } else if (blk.committed[static_cast<size_t>(i)] == vocab.eos_id) {
                past_eos = true;
            }
        }
        target.blocks.push_back(std::move(blk));
    }
    out.target = std::move(target);
    return out;
}

TrajectoryResult collect_teacher_trajectory(const ModelParams& teacher,
                                            const std::vector<int>& context,
                                            const DistillConfig& cfg, const Vocabulary& vocab) {
    DecodeConfig dc;
    dc.mode = DecodeMode::Multistep;
    dc.block_size = cfg.block_size;
    dc.max_blocks = cfg.max_blocks;
    dc.tau = cfg.tau;
    dc.strategy = CacheStrategy::Fused;  // same path as inference
    BlockDecodeSession session(teacher, context, dc, vocab);
    TrajectoryResult out = collect_trajectory_with_backend(session, cfg, vocab);
    out.ledger = session.ledger();
    return out;
}

namespace {

// builds tape, runs forward over the layout, applies `loss_fn` to the logits
// node, backprops and accumulates parameter gradients
template <typename LossFn>
double run_loss(const ModelParams& params, const SequenceLayout& layout, ModelParams* grads,
                LossFn&& loss_fn) {
    Tape tape;
    const ParamNodes nodes = register_params(tape, params);
    const Tape::NodeId logits =
        forward_train(tape, nodes, params.config, layout.token_ids, layout.position_ids,
                      layout.attn);
    const Tape::NodeId loss = loss_fn(tape, logits);
    const double value = tape.value(loss).data[0];
    if (grads) {
        tape.backward(loss);
        accumulate_grads(tape, nodes, *grads);
    }
    return value;
}

}  // namespace

double ar_loss(const ModelParams& params, const SequenceLayout& layout, ModelParams* grads) {
    if (layout.kind != LayoutKind::Ar) throw ConfigError("ar_loss: expected an AR layout");
    return run_loss(params, layout, grads, [&](Tape& tape, Tape::NodeId logits) {
        std::vector<int> targets(layout.loss_targets.begin(), layout.loss_targets.end());
        for (int& t : targets)
            if (t < 0) t = 0;  // rows outside the loss mask; never read
        return tape.cross_entropy(logits, targets, layout.loss_mask);
    });
}

double rad_loss(const ModelParams& params, const SequenceLayout& layout, ModelParams* grads) {
    if (layout.kind != LayoutKind::Rad && layout.kind != LayoutKind::Dcd)
        throw ConfigError("rad_loss: expected a RAD layout");
    return run_loss(params, layout, grads, [&](Tape& tape, Tape::NodeId logits) {
        std::vector<int> targets(layout.loss_targets.begin(), layout.loss_targets.end());
        for (int& t : targets)
            if (t < 0) t = 0;
        return tape.cross_entropy(logits, targets, layout.loss_mask);
    });
}

namespace {

struct DcdRows {
    std::vector<int> rows;                      // layout row per supervised position
    std::vector<std::vector<double>> targets;   // teacher distribution per row
    std::vector<double> weights;                // per row, mean-1 per block
    std::vector<int> committed;                 // pseudo label per row
    std::vector<uint8_t> eos_row_mask;          // layout-sized, rows committed as eos
    std::vector<int> eos_targets;               // layout-sized
    int n_eos = 0;
};

// maps supervised trajectory positions onto noisy-block rows of the layout
DcdRows gather_dcd_rows(const DcdTarget& target, const SequenceLayout& layout,
                        const DistillConfig& cfg, int eos_id) {
    const int B = target.block_size;
    const int n_blocks = static_cast<int>(target.blocks.size());
    if (layout.block_size != B || layout.n_blocks != n_blocks)
        throw DimError("dcd: layout/target block structure mismatch");
    // noisy rows start after context + clean copy
    const int p = layout.len() - 2 * n_blocks * B;
    if (p < 0) throw DimError("dcd: layout too short for target");
    const int noisy0 = p + n_blocks * B;
    DcdRows out;
    out.eos_row_mask.assign(static_cast<size_t>(layout.len()), 0);
    out.eos_targets.assign(static_cast<size_t>(layout.len()), 0);
    for (int n = 0; n < n_blocks; ++n) {
        const DcdTarget::Block& blk = target.blocks[static_cast<size_t>(n)];
        // weights: s_i/S_n rescaled to mean 1 over the block's supervised rows
        std::vector<double> w(static_cast<size_t>(B), 1.0);
        if (cfg.weight_mode == WeightMode::StepProportional) {
            double sum = 0.0;
            int cnt = 0;
            for (int i = 0; i < B; ++i) {
                if (!blk.supervised[static_cast<size_t>(i)]) continue;
                sum += static_cast<double>(blk.unmask_step[static_cast<size_t>(i)]) /
                       static_cast<double>(blk.total_steps);
                ++cnt;
            }
            for (int i = 0; i < B; ++i) {
                const double raw = static_cast<double>(blk.unmask_step[static_cast<size_t>(i)]) /
                                   static_cast<double>(blk.total_steps);
                w[static_cast<size_t>(i)] = sum > 0.0 ? raw * static_cast<double>(cnt) / sum : 1.0;
            }
        }
        for (int i = 0; i < B; ++i) {
            if (!blk.supervised[static_cast<size_t>(i)]) continue;
            const int row = noisy0 + n * B + i;
            out.rows.push_back(row);
            out.targets.push_back(blk.dist[static_cast<size_t>(i)]);
            out.weights.push_back(w[static_cast<size_t>(i)]);
            out.committed.push_back(blk.committed[static_cast<size_t>(i)]);
            if (blk.committed[static_cast<size_t>(i)] == eos_id) {
                out.eos_row_mask[static_cast<size_t>(row)] = 1;
                out.eos_targets[static_cast<size_t>(row)] = eos_id;
                ++out.n_eos;
            }
        }
    }
    return out;
}

}  // namespace

SequenceLayout dcd_layout_for_target(const std::vector<int>& context, const DcdTarget& target,
                                     const Vocabulary& vocab, int max_positions) {
    SequenceLayout L = build_dcd_layout(context, target.committed_blocks(), target.block_size,
                                        vocab, max_positions);
    // conditioning identity: the clean columns the student sees are the
    // committed blocks the teacher conditioned on
    const int p = static_cast<int>(context.size());
    for (size_t n = 0; n < target.blocks.size(); ++n)
        for (int i = 0; i < target.block_size; ++i)
            if (L.token_ids[static_cast<size_t>(p + static_cast<int>(n) * target.block_size + i)] !=
                target.blocks[n].committed[static_cast<size_t>(i)])
                throw DimError("dcd layout: clean copy disagrees with committed trajectory");
    return L;
}

DcdLossParts dcd_loss(const ModelParams& student, const DcdTarget& target,
                      const SequenceLayout& layout, const DistillConfig& cfg, ModelParams* grads) {
    cfg.validate();
    const DcdRows rows = gather_dcd_rows(target, layout, cfg, target.eos_id);
    DcdLossParts parts;
    if (rows.rows.empty()) throw UndefinedMeanError("dcd_loss: no supervised positions");
    Tape tape;
    const ParamNodes nodes = register_params(tape, student);
    const Tape::NodeId logits = forward_train(tape, nodes, student.config, layout.token_ids,
                                              layout.position_ids, layout.attn);
    // weighted mean over supervised positions; the eos term joins the same
    // per-position normalization so lambda weighs it against one position's KL
    std::vector<double> w = rows.weights;
    const double inv = 1.0 / static_cast<double>(w.size());
    for (double& x : w) x *= inv;
    const Tape::NodeId kl = tape.kl_rows(logits, rows.rows, rows.targets, w, cfg.kl_direction);
    Tape::NodeId loss = kl;
    parts.kl = tape.value(kl).data[0];
    if (cfg.eos_ce_weight > 0.0 && rows.n_eos > 0) {
        const Tape::NodeId ce = tape.cross_entropy(logits, rows.eos_targets, rows.eos_row_mask);
        parts.eos_ce = tape.value(ce).data[0];
        loss = tape.add(loss, tape.scale(ce, cfg.eos_ce_weight * rows.n_eos * inv));
    }
    parts.total = tape.value(loss).data[0];
    if (grads) {
        tape.backward(loss);
        accumulate_grads(tape, nodes, *grads);
    }
    return parts;
}

double trajectory_ce_loss(const ModelParams& student, const DcdTarget& target,
                          const SequenceLayout& layout, const DistillConfig& cfg,
                          ModelParams* grads) {
    cfg.validate();
    const DcdRows rows = gather_dcd_rows(target, layout, cfg, target.eos_id);
    if (rows.rows.empty()) throw UndefinedMeanError("trajectory_ce_loss: no supervised positions");
    return run_loss(student, layout, grads, [&](Tape& tape, Tape::NodeId logits) {
        std::vector<uint8_t> mask(static_cast<size_t>(layout.len()), 0);
        std::vector<int> targets(static_cast<size_t>(layout.len()), 0);
        for (size_t i = 0; i < rows.rows.size(); ++i) {
            mask[static_cast<size_t>(rows.rows[i])] = 1;
            targets[static_cast<size_t>(rows.rows[i])] = rows.committed[i];
        }
        return tape.cross_entropy(logits, targets, mask);
    });
}

AdamState make_adam_state(const ModelConfig& cfg) {
    AdamState s;
    ModelParams zero = ModelParams::zeros_like(cfg);
    zero.for_each_named([&](const std::string&, const Tensor& t) {
        s.m.push_back(Tensor::zeros(t.shape));
        s.v.push_back(Tensor::zeros(t.shape));
    });
    return s;
}

void optimizer_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                    const TrainConfig& cfg) {
    cfg.validate();
    double sq_norm = 0.0;
    const_cast<ModelParams&>(grads).for_each_named([&](const std::string& name, Tensor& g) {
        for (double v : g.data) {
            if (!std::isfinite(v)) throw TrainError("optimizer_step: non-finite gradient in " + name);
            sq_norm += v * v;
        }
    });
    const double norm = std::sqrt(sq_norm);
    const double clip_scale = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip)
                                  ? cfg.grad_clip / norm
                                  : 1.0;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    size_t idx = 0;
    size_t gi = 0;
    std::vector<const Tensor*> gplan;
    grads.for_each_named([&](const std::string&, const Tensor& g) { gplan.push_back(&g); });
    params.for_each_named([&](const std::string&, Tensor& p) {
        const Tensor& g = *gplan[gi++];
        Tensor& m = state.m[idx];
        Tensor& v = state.v[idx];
        ++idx;
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double gv = g.data[i] * clip_scale;
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gv;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gv * gv;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    });
}

}  // namespace blockdiff
