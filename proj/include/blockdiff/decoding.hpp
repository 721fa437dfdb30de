#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "blockdiff/corpus.hpp"
#include "blockdiff/model.hpp"

namespace blockdiff {

enum class DecodeMode { Ar, Multistep, Onestep };

std::string to_string(DecodeMode m);
DecodeMode decode_mode_from_string(const std::string& s);

struct DecodeConfig {
    DecodeMode mode = DecodeMode::Multistep;
    int block_size = 8;
    int max_blocks = 4;  // step budget T = max_blocks * block_size
    double tau = 0.9;
    CacheStrategy strategy = CacheStrategy::Fused;
    uint64_t seed = 0;  // decoding is greedy; kept for config echo
};

struct CommitEvent {
    int block = 0;
    int pos = 0;  // position within the block
    int step = 0;
    int token = 0;
    double confidence = 0.0;
};

struct DecodeResult {
    std::vector<int> tokens;  // truncated after the first eos (eos kept)
    int blocks_generated = 0;
    int64_t decoded_tokens = 0;  // decoded work incl. tokens truncated after eos
    bool terminated = false;
    FlopsLedger ledger;
    std::vector<CommitEvent> trace;
    double wall_seconds = 0.0;
};

// A source of per-position token distributions for the current block, given
// the in-block committed state. Neural sessions advance KV caches behind
// this interface; tests can substitute a scripted table.
class BlockQueryBackend {
  public:
    virtual ~BlockQueryBackend() = default;
    // probs[i] is the distribution for position i of the current block;
    // block_state holds committed tokens, mask_id elsewhere
    virtual std::vector<std::vector<double>> query(const std::vector<int>& block_state) = 0;
    virtual void commit_block(const std::vector<int>& tokens) = 0;
};

// KV-cache-backed backend over the transformer.
class BlockDecodeSession : public BlockQueryBackend {
  public:
    BlockDecodeSession(const ModelParams& params, const std::vector<int>& context,
                       const DecodeConfig& cfg, const Vocabulary& vocab);
    std::vector<std::vector<double>> query(const std::vector<int>& block_state) override;
    void commit_block(const std::vector<int>& tokens) override;
    FlopsLedger& ledger() { return ledger_; }
    // raw logits rows of the current block from the most recent query
    const Tensor& last_block_logits() const { return last_block_logits_; }

  private:
    std::vector<uint8_t> full_pass_mask(int rows_for_block) const;
    std::vector<std::vector<double>> block_probs(const Tensor& logits, int row0);
    const ModelParams& params_;
    std::vector<int> context_;
    DecodeConfig cfg_;
    int mask_id_;
    BlockKVCache cache_;
    std::vector<std::vector<int>> committed_;  // strategy none keeps history here
    int block_ = 0;
    bool block_opened_ = false;  // a fused first pass already ran for block_
    FlopsLedger ledger_;
    Tensor last_block_logits_;
};

struct BlockRunResult {
    std::vector<std::vector<int>> blocks;
    std::vector<std::vector<std::vector<double>>> dists;  // commit-time rows per block
    std::vector<std::vector<int>> steps;                  // unmask step per position (1-based)
    std::vector<int> total_steps;                         // per block
    std::vector<CommitEvent> trace;
    bool terminated = false;
    int eos_block = -1;
    int eos_pos = -1;
};

// Confidence-heuristic commit loop shared by decoding and teacher trajectory
// collection: each step commits every masked position with confidence >= tau,
// falling back to the single most confident position (ties to the lowest
// index; token argmax ties to the lowest id). Stops after the block holding
// the first eos.
BlockRunResult run_block_commit_loop(BlockQueryBackend& backend, int n_blocks, int block_size,
                                     double tau, int eos_id, int mask_id,
                                     bool record_dists = false);

DecodeResult decode_ar(const ModelParams& params, const std::vector<int>& context,
                       const DecodeConfig& cfg, const Vocabulary& vocab);
DecodeResult decode_multistep(const ModelParams& params, const std::vector<int>& context,
                              const DecodeConfig& cfg, const Vocabulary& vocab);
DecodeResult decode_onestep(const ModelParams& params, const std::vector<int>& context,
                            const DecodeConfig& cfg, const Vocabulary& vocab);
// dispatch on cfg.mode
DecodeResult decode(const ModelParams& params, const std::vector<int>& context,
                    const DecodeConfig& cfg, const Vocabulary& vocab);

struct LedgerCompareReport {
    bool ok = false;
    int vanilla_passes = 0;
    int fused_passes = 0;
    int64_t vanilla_total = 0;
    int64_t fused_total = 0;
    int64_t final_update_flops = 0;
    std::vector<std::string> discrepancies;
};

// Verifies the one-step-per-block fusion accounting: each fused pass n >= 1
// costs exactly its two replaced vanilla passes, the fused total equals the
// vanilla total minus the final KV update, and the pass counts are N vs 2N.
LedgerCompareReport ledger_compare(const FlopsLedger& vanilla, const FlopsLedger& fused);

struct ThroughputReport {
    double tpf = 0.0;
    double tps = 0.0;
    double termination_rate = 0.0;
    int64_t total_decoded = 0;
    int64_t total_passes = 0;
    double total_seconds = 0.0;
};

ThroughputReport measure_throughput(const ModelParams& params,
                                    const std::vector<ReportRecord>& records,
                                    const DecodeConfig& cfg, const Vocabulary& vocab);

}  // namespace blockdiff
