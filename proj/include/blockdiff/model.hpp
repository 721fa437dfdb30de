#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blockdiff/layout.hpp"
#include "blockdiff/tape.hpp"
#include "blockdiff/tensor.hpp"

namespace blockdiff {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_heads = 2;
    int n_layers = 2;
    int ffn_mult = 4;
    int max_positions = 256;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    FlopsModel flops_model() const { return FlopsModel{d_model, n_layers, ffn_mult}; }
};

struct LayerParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w_in, b_in, w_out, b_out;
};

// Pre-norm transformer with learned absolute position embeddings and no
// timestep input: the corruption level is conveyed by the mask tokens alone.
struct ModelParams {
    ModelConfig config;
    Tensor tok_emb;  // [V x d]
    Tensor pos_emb;  // [max_positions x d]
    std::vector<LayerParams> layers;
    Tensor lnf_g, lnf_b;
    Tensor lm_w;  // [d x V]
    Tensor lm_b;

    static ModelParams zeros_like(const ModelConfig& cfg);

    // visits every tensor in the declared (checkpoint) order
    template <typename F>
    void for_each_named(F&& f) {
        f("tok_emb", tok_emb);
        f("pos_emb", pos_emb);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            LayerParams& L = layers[l];
            f(p + "ln1_g", L.ln1_g);
            f(p + "ln1_b", L.ln1_b);
            f(p + "wq", L.wq);
            f(p + "bq", L.bq);
            f(p + "wk", L.wk);
            f(p + "bk", L.bk);
            f(p + "wv", L.wv);
            f(p + "bv", L.bv);
            f(p + "wo", L.wo);
            f(p + "bo", L.bo);
            f(p + "ln2_g", L.ln2_g);
            f(p + "ln2_b", L.ln2_b);
            f(p + "w_in", L.w_in);
            f(p + "b_in", L.b_in);
            f(p + "w_out", L.w_out);
            f(p + "b_out", L.b_out);
        }
        f("lnf_g", lnf_g);
        f("lnf_b", lnf_b);
        f("lm_w", lm_w);
        f("lm_b", lm_b);
    }
    template <typename F>
    void for_each_named(F&& f) const {
        const_cast<ModelParams*>(this)->for_each_named(
            [&](const std::string& n, Tensor& t) { f(n, const_cast<const Tensor&>(t)); });
    }
};

// scaled-normal weights (0.02), zero biases, unit layer-norm gains
ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

enum class CacheStrategy { None, Vanilla, Fused };

std::string to_string(CacheStrategy s);
CacheStrategy cache_strategy_from_string(const std::string& s);

// Per-layer cached key/value rows for incremental block decoding.
struct BlockKVCache {
    CacheStrategy strategy = CacheStrategy::Vanilla;
    int cached_len = 0;
    std::vector<std::vector<double>> k;  // per layer, cached_len x d row-major
    std::vector<std::vector<double>> v;
    // committed-but-uncached block, fused strategy only
    std::vector<int> pending_tokens;
    std::vector<int> pending_positions;

    explicit BlockKVCache(int n_layers = 0, CacheStrategy strategy = CacheStrategy::Vanilla)
        : strategy(strategy), k(static_cast<size_t>(n_layers)), v(static_cast<size_t>(n_layers)) {}
};

enum class PassKind { Decode, Prefill };

struct PassRecord {
    int pass_index = 0;
    int64_t q = 0;
    int64_t context_len = 0;  // columns attended by each of the q rows
    int64_t flops = 0;
};

// Exact multiply-add accounting, incremented at the compute loops themselves.
struct FlopsLedger {
    int forward_passes = 0;
    int64_t multiply_adds = 0;
    std::vector<PassRecord> records;
    int prefill_passes = 0;
    int64_t prefill_multiply_adds = 0;
};

struct DenoiserOutput {
    Tensor logits;  // [q x V]
};

// One forward pass over q chunk tokens against an optional cache holding c
// rows. attn is row-major [q x (c+q)]; logits depend only on tokens reachable
// through it. Rows flagged in cache_write (size q) get their per-layer K/V
// appended to the cache. The ledger, when given, records the pass under
// `kind` with one record per run of rows sharing a context length.
DenoiserOutput forward(const ModelParams& params, const std::vector<int>& tokens,
                       const std::vector<int>& positions, const std::vector<uint8_t>& attn,
                       BlockKVCache* cache = nullptr,
                       const std::vector<uint8_t>& cache_write = {},
                       FlopsLedger* ledger = nullptr, PassKind kind = PassKind::Decode);

// Node handles for every parameter registered on a tape.
struct ParamNodes {
    Tape::NodeId tok_emb, pos_emb;
    struct Layer {
        Tape::NodeId ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w_in, b_in,
            w_out, b_out;
    };
    std::vector<Layer> layers;
    Tape::NodeId lnf_g, lnf_b, lm_w, lm_b;
};

ParamNodes register_params(Tape& tape, const ModelParams& params);

// Differentiable forward over a full layout (no cache); mirrors forward()
// kernel-for-kernel so the two paths agree numerically.
Tape::NodeId forward_train(Tape& tape, const ParamNodes& nodes, const ModelConfig& cfg,
                           const std::vector<int>& tokens, const std::vector<int>& positions,
                           const std::vector<uint8_t>& attn);

// accumulates tape gradients into `grads` (same structure as the params)
void accumulate_grads(const Tape& tape, const ParamNodes& nodes, ModelParams& grads);

}  // namespace blockdiff
