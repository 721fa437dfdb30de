#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blockdiff/analysis.hpp"
#include "blockdiff/metrics.hpp"
#include "blockdiff/training.hpp"

namespace blockdiff {

// Deterministic corpus: record i draws from derive_seed(seed, offset + i),
// independent of generation order.
std::vector<ReportRecord> make_corpus(const ReportGrammar& grammar, const Vocabulary& vocab,
                                      uint64_t seed, int count, bool normalized,
                                      uint64_t stream_offset = 0);

struct StageMetricsRow {
    int step = 0;
    double loss = 0.0;
    double kl = 0.0;
    double eos_ce = 0.0;
};

ModelParams train_ar_stage(const std::vector<ReportRecord>& records, const Vocabulary& vocab,
                           const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                           std::vector<StageMetricsRow>* history = nullptr);

// Converts an AR checkpoint into a block-diffusion model: response-only
// duplication layouts with fresh per-block mask ratios each visit.
ModelParams adapt_rad_stage(const ModelParams& init, const std::vector<ReportRecord>& records,
                            const Vocabulary& vocab, int block_size,
                            const TrainConfig& train_cfg,
                            std::vector<StageMetricsRow>* history = nullptr);

enum class DistillObjective { Dcd, TrajectoryCe };

std::string to_string(DistillObjective o);
DistillObjective distill_objective_from_string(const std::string& s);

struct DistillStats {
    int collected = 0;
    int discarded = 0;
};

// Phase 1 + phase 2 driver. Teacher trajectories are collected through the
// fused decode path and cached per record (or regenerated on every visit).
ModelParams distill_stage(const ModelParams& teacher, const std::vector<ReportRecord>& records,
                          const Vocabulary& vocab, const DistillConfig& distill_cfg,
                          const TrainConfig& train_cfg, DistillObjective objective,
                          bool cache_trajectories = true,
                          std::vector<StageMetricsRow>* history = nullptr,
                          DistillStats* stats = nullptr);

struct FullEvalReport : EvalReport {
    double eos_commit_confidence_mean = 0.0;
    int64_t eos_commit_count = 0;
    // confidence of the terminating commit only (first eos per sample)
    double eos_first_confidence_mean = 0.0;
    int64_t eos_first_count = 0;
};

FullEvalReport evaluate_model(const ModelParams& params, const std::vector<ReportRecord>& records,
                              const ReportGrammar& grammar, const Vocabulary& vocab,
                              const DecodeConfig& decode_cfg,
                              const ModelParams* ar_scorer = nullptr);

}  // namespace blockdiff
