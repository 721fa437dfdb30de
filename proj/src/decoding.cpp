#include "blockdiff/decoding.hpp"

#include <chrono>
#include <cmath>

#include "blockdiff/kernels.hpp"

namespace blockdiff {

std::string to_string(DecodeMode m) {
    switch (m) {
        case DecodeMode::Ar: return "ar";
        case DecodeMode::Multistep: return "multistep";
        case DecodeMode::Onestep: return "onestep";
    }
    return "?";
}

DecodeMode decode_mode_from_string(const std::string& s) {
    if (s == "ar") return DecodeMode::Ar;
    if (s == "multistep") return DecodeMode::Multistep;
    if (s == "onestep") return DecodeMode::Onestep;
    throw ConfigError("unknown decode mode: " + s);
}

namespace {

int argmax_lowest(const std::vector<double>& row) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(row.size()); ++i)
        if (row[static_cast<size_t>(i)] > row[static_cast<size_t>(best)]) best = i;
    return best;
}

}  // namespace

BlockDecodeSession::BlockDecodeSession(const ModelParams& params, const std::vector<int>& context,
                                       const DecodeConfig& cfg, const Vocabulary& vocab)
    : params_(params),
      context_(context),
      cfg_(cfg),
      mask_id_(vocab.mask_id),
      cache_(params.config.n_layers, cfg.strategy) {
    if (cfg_.block_size <= 0) throw ConfigError("decode: block size must be positive");
    if (cfg_.strategy != CacheStrategy::None && !context_.empty()) {
        // causal prefill of the prompt; not counted as a decode pass
        const int p = static_cast<int>(context_.size());
        std::vector<int> positions(static_cast<size_t>(p));
        for (int i = 0; i < p; ++i) positions[static_cast<size_t>(i)] = i;
        std::vector<uint8_t> attn(static_cast<size_t>(p) * static_cast<size_t>(p), 0);
        for (int i = 0; i < p; ++i)
            for (int j = 0; j <= i; ++j) attn[static_cast<size_t>(i * p + j)] = 1;
        forward(params_, context_, positions, attn, &cache_,
                std::vector<uint8_t>(static_cast<size_t>(p), 1), &ledger_, PassKind::Prefill);
    }
}

// mask for a strategy-none pass: context + committed blocks + current block
std::vector<uint8_t> BlockDecodeSession::full_pass_mask(int rows_for_block) const {
    const int p = static_cast<int>(context_.size());
    const int b = cfg_.block_size;
    const int n = block_;
    const int total = p + n * b + rows_for_block;
    std::vector<uint8_t> attn(static_cast<size_t>(total) * static_cast<size_t>(total), 0);
    auto allow = [&](int r, int c) { attn[static_cast<size_t>(r) * static_cast<size_t>(total) + static_cast<size_t>(c)] = 1; };
    for (int i = 0; i < p; ++i)
        for (int j = 0; j <= i; ++j) allow(i, j);
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < p + (k + 1) * b; ++j) allow(p + k * b + i, j);
    for (int i = 0; i < rows_for_block; ++i)
        for (int j = 0; j < total; ++j) allow(p + n * b + i, j);
    return attn;
}

std::vector<std::vector<double>> BlockDecodeSession::query(const std::vector<int>& block_state) {
    const int b = cfg_.block_size;
    if (static_cast<int>(block_state.size()) != b)
        throw DimError("decode query: block state size mismatch");
    const int p = static_cast<int>(context_.size());
    const int base_pos = p + block_ * b;
    Tensor logits;

    if (cfg_.strategy == CacheStrategy::None) {
        std::vector<int> tokens = context_;
        for (const auto& blk : committed_) tokens.insert(tokens.end(), blk.begin(), blk.end());
        tokens.insert(tokens.end(), block_state.begin(), block_state.end());
        std::vector<int> positions(tokens.size());
        for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);
        logits = forward(params_, tokens, positions, full_pass_mask(b), nullptr, {}, &ledger_,
                         PassKind::Decode)
                     .logits;
        return block_probs(logits, static_cast<int>(tokens.size()) - b);
    }

    const bool fused_first = cfg_.strategy == CacheStrategy::Fused &&
                             !cache_.pending_tokens.empty() && !block_opened_;
    std::vector<int> tokens, positions;
    std::vector<uint8_t> cache_write;
    int pend = 0;
    if (fused_first) {
        pend = static_cast<int>(cache_.pending_tokens.size());
        tokens = cache_.pending_tokens;
        positions = cache_.pending_positions;
        cache_write.assign(static_cast<size_t>(pend + b), 0);
        for (int i = 0; i < pend; ++i) cache_write[static_cast<size_t>(i)] = 1;
    }
    tokens.insert(tokens.end(), block_state.begin(), block_state.end());
    for (int i = 0; i < b; ++i) positions.push_back(base_pos + i);

    const int q = static_cast<int>(tokens.size());
    const int c = cache_.cached_len;
    const int w = c + q;
    std::vector<uint8_t> attn(static_cast<size_t>(q) * static_cast<size_t>(w), 0);
    auto allow = [&](int r, int col) { attn[static_cast<size_t>(r) * static_cast<size_t>(w) + static_cast<size_t>(col)] = 1; };
    for (int i = 0; i < pend; ++i)
        for (int j = 0; j < c + pend; ++j) allow(i, j);
    for (int i = pend; i < q; ++i)
        for (int j = 0; j < w; ++j) allow(i, j);
    logits = forward(params_, tokens, positions, attn, &cache_, cache_write, &ledger_,
                     PassKind::Decode)
                 .logits;
    if (fused_first) {
        cache_.pending_tokens.clear();
        cache_.pending_positions.clear();
    }
    block_opened_ = true;
    return block_probs(logits, q - b);
}

std::vector<std::vector<double>> BlockDecodeSession::block_probs(const Tensor& logits, int row0) {
    const int b = cfg_.block_size;
    const int v = params_.config.vocab_size;
    last_block_logits_ = Tensor::zeros({b, v});
    std::vector<std::vector<double>> probs(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        std::copy(logits.row_ptr(row0 + i), logits.row_ptr(row0 + i) + v,
                  last_block_logits_.row_ptr(i));
        probs[static_cast<size_t>(i)].resize(static_cast<size_t>(v));
        kernels::softmax_masked_row(last_block_logits_.row_ptr(i), nullptr, v,
                                    probs[static_cast<size_t>(i)].data());
    }
    return probs;
}

void BlockDecodeSession::commit_block(const std::vector<int>& tokens) {
    const int b = cfg_.block_size;
    const int p = static_cast<int>(context_.size());
    const int base_pos = p + block_ * b;
    if (cfg_.strategy == CacheStrategy::None) {
        committed_.push_back(tokens);
    } else if (cfg_.strategy == CacheStrategy::Vanilla) {
        // dedicated KV update pass, performed for the final block as well
        std::vector<int> positions(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) positions[static_cast<size_t>(i)] = base_pos + i;
        const int w = cache_.cached_len + b;
        std::vector<uint8_t> attn(static_cast<size_t>(b) * static_cast<size_t>(w), 1);
        forward(params_, tokens, positions, attn, &cache_,
                std::vector<uint8_t>(static_cast<size_t>(b), 1), &ledger_, PassKind::Decode);
    } else {
        cache_.pending_tokens = tokens;
        cache_.pending_positions.resize(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) cache_.pending_positions[static_cast<size_t>(i)] = base_pos + i;
    }
    ++block_;
    block_opened_ = false;
}

BlockRunResult run_block_commit_loop(BlockQueryBackend& backend, int n_blocks, int block_size,
                                     double tau, int eos_id, int mask_id, bool record_dists) {
    BlockRunResult out;
    for (int n = 0; n < n_blocks; ++n) {
        std::vector<int> state(static_cast<size_t>(block_size), mask_id);
        std::vector<uint8_t> committed(static_cast<size_t>(block_size), 0);
        std::vector<std::vector<double>> dists(static_cast<size_t>(block_size));
        std::vector<int> steps(static_cast<size_t>(block_size), 0);
        int remaining = block_size;
        int step = 0;
        while (remaining > 0) {
            ++step;
            const auto probs = backend.query(state);
            double best_conf = -1.0;
            int best_pos = -1;
            std::vector<int> ready;
            for (int i = 0; i < block_size; ++i) {
                if (committed[static_cast<size_t>(i)]) continue;
                const double ci = probs[static_cast<size_t>(i)][static_cast<size_t>(
                    argmax_lowest(probs[static_cast<size_t>(i)]))];
                if (ci >= tau) ready.push_back(i);
                if (ci > best_conf) {
                    best_conf = ci;
                    best_pos = i;
                }
            }
            if (ready.empty()) ready.push_back(best_pos);
            for (int i : ready) {
                const int tok = argmax_lowest(probs[static_cast<size_t>(i)]);
                state[static_cast<size_t>(i)] = tok;
                committed[static_cast<size_t>(i)] = 1;
                steps[static_cast<size_t>(i)] = step;
                if (record_dists) dists[static_cast<size_t>(i)] = probs[static_cast<size_t>(i)];
                out.trace.push_back(CommitEvent{n, i, step, tok,
                                                probs[static_cast<size_t>(i)][static_cast<size_t>(tok)]});
                --remaining;
            }
        }
        backend.commit_block(state);
        out.blocks.push_back(state);
        out.steps.push_back(std::move(steps));
        out.total_steps.push_back(step);
        if (record_dists) out.dists.push_back(std::move(dists));
        for (int i = 0; i < block_size; ++i) {
            if (state[static_cast<size_t>(i)] == eos_id) {
                out.terminated = true;
                out.eos_block = n;
                out.eos_pos = i;
                break;
            }
        }
        if (out.terminated) break;
    }
    return out;
}

namespace {

DecodeResult decode_blocks(const ModelParams& params, const std::vector<int>& context,
                           const DecodeConfig& cfg, const Vocabulary& vocab) {
    const auto t0 = std::chrono::steady_clock::now();
    const double tau = cfg.mode == DecodeMode::Onestep ? 0.0 : cfg.tau;
    BlockDecodeSession session(params, context, cfg, vocab);
    BlockRunResult run = run_block_commit_loop(session, cfg.max_blocks, cfg.block_size, tau,
                                               vocab.eos_id, vocab.mask_id);
    DecodeResult out;
    out.blocks_generated = static_cast<int>(run.blocks.size());
    out.decoded_tokens = static_cast<int64_t>(run.blocks.size()) * cfg.block_size;
    out.terminated = run.terminated;
    out.trace = std::move(run.trace);
    for (size_t n = 0; n < run.blocks.size(); ++n) {
        for (int i = 0; i < cfg.block_size; ++i) {
            out.tokens.push_back(run.blocks[n][static_cast<size_t>(i)]);
            if (run.terminated && static_cast<int>(n) == run.eos_block && i == run.eos_pos) break;
        }
    }
    out.ledger = session.ledger();
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace

DecodeResult decode_ar(const ModelParams& params, const std::vector<int>& context,
                       const DecodeConfig& cfg, const Vocabulary& vocab) {
    if (context.empty()) throw ConfigError("decode_ar: context must be nonempty");
    const auto t0 = std::chrono::steady_clock::now();
    DecodeResult out;
    const int budget = cfg.max_blocks * cfg.block_size;
    BlockKVCache cache(params.config.n_layers, CacheStrategy::Vanilla);
    const int p = static_cast<int>(context.size());
    if (budget > 0 && p > 1) {
        std::vector<int> prefix(context.begin(), context.end() - 1);
        std::vector<int> positions(prefix.size());
        for (size_t i = 0; i < prefix.size(); ++i) positions[i] = static_cast<int>(i);
        const int n = static_cast<int>(prefix.size());
        std::vector<uint8_t> attn(static_cast<size_t>(n) * static_cast<size_t>(n), 0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) attn[static_cast<size_t>(i * n + j)] = 1;
        forward(params, prefix, positions, attn, &cache,
                std::vector<uint8_t>(static_cast<size_t>(n), 1), &out.ledger, PassKind::Prefill);
    }
    int query_token = context.back();
    for (int t = 0; t < budget; ++t) {
        const std::vector<int> tokens = {query_token};
        const std::vector<int> positions = {p - 1 + t};
        const std::vector<uint8_t> attn(static_cast<size_t>(cache.cached_len) + 1, 1);
        const Tensor logits = forward(params, tokens, positions, attn, &cache, {1}, &out.ledger,
                                      PassKind::Decode)
                                  .logits;
        std::vector<double> probs(static_cast<size_t>(params.config.vocab_size));
        kernels::softmax_masked_row(logits.row_ptr(0), nullptr, params.config.vocab_size,
                                    probs.data());
        const int tok = argmax_lowest(probs);
        out.tokens.push_back(tok);
        out.trace.push_back(CommitEvent{t / std::max(cfg.block_size, 1), 0, 1, tok,
                                        probs[static_cast<size_t>(tok)]});
        ++out.decoded_tokens;
        if (tok == vocab.eos_id) {
            out.terminated = true;
            break;
        }
        query_token = tok;
    }
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

DecodeResult decode_multistep(const ModelParams& params, const std::vector<int>& context,
                              const DecodeConfig& cfg, const Vocabulary& vocab) {
    DecodeConfig c = cfg;
    c.mode = DecodeMode::Multistep;
    return decode_blocks(params, context, c, vocab);
}

DecodeResult decode_onestep(const ModelParams& params, const std::vector<int>& context,
                            const DecodeConfig& cfg, const Vocabulary& vocab) {
    DecodeConfig c = cfg;
    c.mode = DecodeMode::Onestep;
    return decode_blocks(params, context, c, vocab);
}

DecodeResult decode(const ModelParams& params, const std::vector<int>& context,
                    const DecodeConfig& cfg, const Vocabulary& vocab) {
    switch (cfg.mode) {
        case DecodeMode::Ar: return decode_ar(params, context, cfg, vocab);
        case DecodeMode::Multistep: return decode_multistep(params, context, cfg, vocab);
        case DecodeMode::Onestep: return decode_onestep(params, context, cfg, vocab);
    }
    throw ConfigError("decode: bad mode");
}

LedgerCompareReport ledger_compare(const FlopsLedger& vanilla, const FlopsLedger& fused) {
    LedgerCompareReport r;
    r.vanilla_passes = vanilla.forward_passes;
    r.fused_passes = fused.forward_passes;
    r.vanilla_total = vanilla.multiply_adds;
    r.fused_total = fused.multiply_adds;
    const int n = fused.forward_passes;
    if (vanilla.forward_passes != 2 * n)
        r.discrepancies.push_back("pass count: vanilla " + std::to_string(vanilla.forward_passes) +
                                  " != 2x fused " + std::to_string(n));
    if (static_cast<int>(vanilla.records.size()) != 2 * n)
        r.discrepancies.push_back("vanilla record count " + std::to_string(vanilla.records.size()) +
                                  " != " + std::to_string(2 * n));
    // group fused records by pass
    std::vector<int64_t> fused_by_pass(static_cast<size_t>(n), 0);
    for (const PassRecord& rec : fused.records) {
        if (rec.pass_index < 0 || rec.pass_index >= n) {
            r.discrepancies.push_back("fused record with bad pass index " +
                                      std::to_string(rec.pass_index));
            continue;
        }
        fused_by_pass[static_cast<size_t>(rec.pass_index)] += rec.flops;
    }
    if (r.discrepancies.empty()) {
        for (int i = 1; i < n; ++i) {
            // fused pass i replaces the KV update of block i-1 and the denoise of block i
            const int64_t expect = vanilla.records[static_cast<size_t>(2 * (i - 1) + 1)].flops +
                                   vanilla.records[static_cast<size_t>(2 * i)].flops;
            if (fused_by_pass[static_cast<size_t>(i)] != expect)
                r.discrepancies.push_back(
                    "fused pass " + std::to_string(i) + " flops " +
                    std::to_string(fused_by_pass[static_cast<size_t>(i)]) + " != vanilla passes " +
                    std::to_string(2 * (i - 1) + 1) + "+" + std::to_string(2 * i) + " = " +
                    std::to_string(expect));
        }
        if (n > 0) {
            if (fused_by_pass[0] != vanilla.records[0].flops)
                r.discrepancies.push_back("fused pass 0 flops != vanilla denoise 0");
            r.final_update_flops = vanilla.records[static_cast<size_t>(2 * n - 1)].flops;
            if (fused.multiply_adds != vanilla.multiply_adds - r.final_update_flops)
                r.discrepancies.push_back("total fused " + std::to_string(fused.multiply_adds) +
                                          " != total vanilla - final update " +
                                          std::to_string(vanilla.multiply_adds -
                                                         r.final_update_flops));
        }
    }
    r.ok = r.discrepancies.empty();
    return r;
}

ThroughputReport measure_throughput(const ModelParams& params,
                                    const std::vector<ReportRecord>& records,
                                    const DecodeConfig& cfg, const Vocabulary& vocab) {
    if (records.empty()) throw ConfigError("measure_throughput: dataset is empty");
    ThroughputReport rep;
    int terminated = 0;
    for (const ReportRecord& rec : records) {
        const DecodeResult r = decode(params, rec.context_tokens, cfg, vocab);
        rep.total_decoded += r.decoded_tokens;
        rep.total_passes += r.ledger.forward_passes;
        rep.total_seconds += r.wall_seconds;
        terminated += r.terminated ? 1 : 0;
    }
    rep.tpf = rep.total_passes > 0
                  ? static_cast<double>(rep.total_decoded) / static_cast<double>(rep.total_passes)
                  : 0.0;
    rep.tps = rep.total_seconds > 0.0
                  ? static_cast<double>(rep.total_decoded) / rep.total_seconds
                  : 0.0;
    rep.termination_rate = static_cast<double>(terminated) / static_cast<double>(records.size());
    return rep;
}

}  // namespace blockdiff
