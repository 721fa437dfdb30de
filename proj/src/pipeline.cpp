#include "blockdiff/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <unordered_map>

namespace blockdiff {

std::vector<ReportRecord> make_corpus(const ReportGrammar& grammar, const Vocabulary& vocab,
                                      uint64_t seed, int count, bool normalized,
                                      uint64_t stream_offset) {
    std::vector<ReportRecord> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i)
        out.push_back(generate_sample(grammar, vocab,
                                      derive_seed(seed, stream_offset + static_cast<uint64_t>(i)),
                                      normalized));
    return out;
}

std::string to_string(DistillObjective o) {
    return o == DistillObjective::Dcd ? "dcd" : "trajectory-ce";
}

DistillObjective distill_objective_from_string(const std::string& s) {
    if (s == "dcd") return DistillObjective::Dcd;
    if (s == "trajectory-ce" || s == "trajectory_ce") return DistillObjective::TrajectoryCe;
    throw ConfigError("unknown distill objective: " + s);
}

namespace {

// deterministic epoch shuffling over record indices
class BatchSampler {
  public:
    BatchSampler(size_t n, uint64_t seed) : rng_(seed) {
        order_.resize(n);
        for (size_t i = 0; i < n; ++i) order_[i] = i;
        rng_.shuffle(order_);
    }
    size_t next() {
        if (cursor_ >= order_.size()) {
            rng_.shuffle(order_);
            cursor_ = 0;
        }
        return order_[cursor_++];
    }

  private:
    Rng rng_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
};

void scale_grads(ModelParams& grads, double s) {
    grads.for_each_named([&](const std::string&, Tensor& t) {
        for (double& v : t.data) v *= s;
    });
}

void zero_grads(ModelParams& grads) { scale_grads(grads, 0.0); }

}  // namespace

ModelParams train_ar_stage(const std::vector<ReportRecord>& records, const Vocabulary& vocab,
                           const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                           std::vector<StageMetricsRow>* history) {
    if (records.empty()) throw ConfigError("train_ar_stage: empty dataset");
    model_cfg.validate();
    train_cfg.validate();
    (void)vocab;
    ModelParams params = init_params(model_cfg, train_cfg.seed);
    ModelParams grads = ModelParams::zeros_like(model_cfg);
    AdamState adam = make_adam_state(model_cfg);
    BatchSampler sampler(records.size(), derive_seed(train_cfg.seed, 0x41));
    for (int step = 0; step < train_cfg.steps; ++step) {
        zero_grads(grads);
        double loss_sum = 0.0;
        for (int b = 0; b < train_cfg.batch_size; ++b) {
            const ReportRecord& rec = records[sampler.next()];
            const SequenceLayout layout = build_ar_layout(rec.context_tokens, rec.response_tokens,
                                                          model_cfg.max_positions);
            loss_sum += ar_loss(params, layout, &grads);
        }
        scale_grads(grads, 1.0 / train_cfg.batch_size);
        optimizer_step(params, grads, adam, train_cfg);
        if (history)
            history->push_back({step, loss_sum / train_cfg.batch_size, 0.0, 0.0});
    }
    return params;
}

ModelParams adapt_rad_stage(const ModelParams& init, const std::vector<ReportRecord>& records,
                            const Vocabulary& vocab, int block_size,
                            const TrainConfig& train_cfg, std::vector<StageMetricsRow>* history) {
    if (records.empty()) throw ConfigError("adapt_rad_stage: empty dataset");
    if (block_size <= 0) throw ConfigError("adapt_rad_stage: block size must be positive");
    train_cfg.validate();
    ModelParams params = init;
    const ModelConfig& model_cfg = params.config;
    ModelParams grads = ModelParams::zeros_like(model_cfg);
    AdamState adam = make_adam_state(model_cfg);
    BatchSampler sampler(records.size(), derive_seed(train_cfg.seed, 0x52));
    Rng ratio_rng(derive_seed(train_cfg.seed, 0x53));
    for (int step = 0; step < train_cfg.steps; ++step) {
        zero_grads(grads);
        double loss_sum = 0.0;
        int used = 0;
        for (int b = 0; b < train_cfg.batch_size; ++b) {
            const ReportRecord& rec = records[sampler.next()];
            const int n_blocks =
                (static_cast<int>(rec.response_tokens.size()) + block_size - 1) / block_size;
            std::vector<double> ratios(static_cast<size_t>(n_blocks));
            for (double& r : ratios) r = ratio_rng.next_double_open_low();
            const SequenceLayout layout =
                build_rad_layout(rec.context_tokens, rec.response_tokens, block_size, ratios,
                                 ratio_rng.next_u64(), vocab, model_cfg.max_positions);
            bool any_loss = false;
            for (uint8_t m : layout.loss_mask) any_loss = any_loss || m;
            if (!any_loss) continue;  // every masked position fell on padding
            loss_sum += rad_loss(params, layout, &grads);
            ++used;
        }
        if (used == 0) continue;
        scale_grads(grads, 1.0 / used);
        optimizer_step(params, grads, adam, train_cfg);
        if (history) history->push_back({step, loss_sum / used, 0.0, 0.0});
    }
    return params;
}

ModelParams distill_stage(const ModelParams& teacher, const std::vector<ReportRecord>& records,
                          const Vocabulary& vocab, const DistillConfig& distill_cfg,
                          const TrainConfig& train_cfg, DistillObjective objective,
                          bool cache_trajectories, std::vector<StageMetricsRow>* history,
                          DistillStats* stats) {
    if (records.empty()) throw ConfigError("distill_stage: empty dataset");
    distill_cfg.validate();
    train_cfg.validate();
    ModelParams params = teacher;  // student initializes from the teacher
    const ModelConfig& model_cfg = params.config;
    ModelParams grads = ModelParams::zeros_like(model_cfg);
    AdamState adam = make_adam_state(model_cfg);
    BatchSampler sampler(records.size(), derive_seed(train_cfg.seed, 0x63));

    std::unordered_map<size_t, std::optional<DcdTarget>> cache;
    auto trajectory_for = [&](size_t idx) -> std::optional<DcdTarget> {
        if (cache_trajectories) {
            auto it = cache.find(idx);
            if (it != cache.end()) return it->second;
        }
        TrajectoryResult tr =
            collect_teacher_trajectory(teacher, records[idx].context_tokens, distill_cfg, vocab);
        if (stats) {
            if (tr.target)
                ++stats->collected;
            else
                ++stats->discarded;
        }
        if (cache_trajectories) cache[idx] = tr.target;
        return tr.target;
    };

    for (int step = 0; step < train_cfg.steps; ++step) {
        zero_grads(grads);
        double loss_sum = 0.0, kl_sum = 0.0, eos_sum = 0.0;
        int used = 0;
        for (int b = 0; b < train_cfg.batch_size; ++b) {
            const size_t idx = sampler.next();
            const std::optional<DcdTarget> target = trajectory_for(idx);
            if (!target || target->blocks.empty()) continue;  // discarded sample
            const SequenceLayout layout = dcd_layout_for_target(
                records[idx].context_tokens, *target, vocab, model_cfg.max_positions);
            if (objective == DistillObjective::Dcd) {
                const DcdLossParts parts = dcd_loss(params, *target, layout, distill_cfg, &grads);
                loss_sum += parts.total;
                kl_sum += parts.kl;
                eos_sum += parts.eos_ce;
            } else {
                loss_sum += trajectory_ce_loss(params, *target, layout, distill_cfg, &grads);
            }
            ++used;
        }
        if (used == 0) continue;
        scale_grads(grads, 1.0 / used);
        optimizer_step(params, grads, adam, train_cfg);
        if (history)
            history->push_back({step, loss_sum / used, kl_sum / used, eos_sum / used});
    }
    return params;
}

FullEvalReport evaluate_model(const ModelParams& params, const std::vector<ReportRecord>& records,
                              const ReportGrammar& grammar, const Vocabulary& vocab,
                              const DecodeConfig& decode_cfg, const ModelParams* ar_scorer) {
    if (records.empty()) throw ConfigError("evaluate_model: empty dataset");
    FullEvalReport rep;
    double eos_conf_sum = 0.0;
    double eos_first_sum = 0.0;
    int64_t total_passes = 0;
    double total_seconds = 0.0;
    for (const ReportRecord& rec : records) {
        const DecodeResult r = decode(params, rec.context_tokens, decode_cfg, vocab);
        EvalSample s;
        s.rouge = rouge_l(r.tokens, rec.response_tokens);
        s.finding = finding_f1(r.tokens, rec.labels, grammar, vocab);
        s.terminated = r.terminated;
        s.decoded_tokens = r.decoded_tokens;
        s.passes = r.ledger.forward_passes;
        s.seconds = r.wall_seconds;
        if (ar_scorer && !r.tokens.empty()) s.ppl = teacher_ppl(*ar_scorer, rec.context_tokens, r.tokens);
        const CommitEvent* first_eos = nullptr;
        for (const CommitEvent& e : r.trace) {
            if (e.token == vocab.eos_id) {
                eos_conf_sum += e.confidence;
                ++rep.eos_commit_count;
                if (!first_eos || e.block < first_eos->block ||
                    (e.block == first_eos->block && e.pos < first_eos->pos))
                    first_eos = &e;
            }
        }
        if (first_eos) {
            eos_first_sum += first_eos->confidence;
            ++rep.eos_first_count;
        }
        rep.rouge_l += s.rouge;
        rep.finding_precision += s.finding.precision;
        rep.finding_recall += s.finding.recall;
        rep.finding_f1 += s.finding.f1;
        rep.false_positive_rate += s.finding.false_positive_rate;
        rep.false_negative_rate += s.finding.false_negative_rate;
        rep.garbage_fraction += s.finding.garbage_fraction;
        rep.teacher_ppl += s.ppl;
        rep.termination_rate += s.terminated ? 1.0 : 0.0;
        total_passes += s.passes;
        total_seconds += s.seconds;
        rep.samples += 1;
        rep.per_sample.push_back(std::move(s));
    }
    const double n = static_cast<double>(rep.samples);
    rep.rouge_l /= n;
    rep.finding_precision /= n;
    rep.finding_recall /= n;
    rep.finding_f1 /= n;
    rep.false_positive_rate /= n;
    rep.false_negative_rate /= n;
    rep.garbage_fraction /= n;
    rep.teacher_ppl /= n;
    rep.termination_rate /= n;
    int64_t total_decoded = 0;
    for (const EvalSample& s : rep.per_sample) total_decoded += s.decoded_tokens;
    rep.tpf = total_passes > 0 ? static_cast<double>(total_decoded) / static_cast<double>(total_passes)
                               : 0.0;
    rep.tps = total_seconds > 0.0 ? static_cast<double>(total_decoded) / total_seconds : 0.0;
    rep.eos_commit_confidence_mean =
        rep.eos_commit_count > 0 ? eos_conf_sum / static_cast<double>(rep.eos_commit_count) : 0.0;
    rep.eos_first_confidence_mean =
        rep.eos_first_count > 0 ? eos_first_sum / static_cast<double>(rep.eos_first_count) : 0.0;
    return rep;
}

}  // namespace blockdiff
