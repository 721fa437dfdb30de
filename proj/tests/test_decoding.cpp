#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "blockdiff/decoding.hpp"
#include "blockdiff/training.hpp"

using namespace blockdiff;

namespace {

ModelConfig tiny_config(int vocab) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.ffn_mult = 2;
    cfg.max_positions = 96;
    return cfg;
}

Vocabulary bare_vocab(int size) {
    Vocabulary v;
    v.symbols = {"<mask>", "<eos>", "<pad>"};
    for (int i = 3; i < size; ++i) v.symbols.push_back("w" + std::to_string(i));
    return v;
}

DecodeConfig block_cfg(DecodeMode mode, CacheStrategy strategy, int B, int N, double tau = 0.9) {
    DecodeConfig cfg;
    cfg.mode = mode;
    cfg.block_size = B;
    cfg.max_blocks = N;
    cfg.tau = tau;
    cfg.strategy = strategy;
    return cfg;
}

}  // namespace

TEST_CASE("ar decode: zero budget, pass counting, eos stop") {
    const Vocabulary vocab = bare_vocab(11);
    const ModelParams p = init_params(tiny_config(vocab.size()), 2);
    DecodeConfig cfg = block_cfg(DecodeMode::Ar, CacheStrategy::Vanilla, 4, 0);
    const DecodeResult empty = decode_ar(p, {3, 4}, cfg, vocab);
    CHECK(empty.tokens.empty());
    CHECK(empty.ledger.forward_passes == 0);

    cfg.max_blocks = 5;
    const DecodeResult r = decode_ar(p, {3, 4, 5}, cfg, vocab);
    CHECK(r.ledger.forward_passes == static_cast<int>(r.tokens.size()));
    CHECK(r.decoded_tokens == static_cast<int64_t>(r.tokens.size()));
    if (r.terminated) CHECK(r.tokens.back() == vocab.eos_id);
    CHECK_THROWS_AS(decode_ar(p, {}, cfg, vocab), ConfigError);
}

TEST_CASE("onestep pass-count identities: vanilla 2N', fused N'") {
    const Vocabulary vocab = bare_vocab(9);
    const ModelParams p = init_params(tiny_config(vocab.size()), 7);
    for (int B : {1, 4}) {
        for (int N : {1, 3}) {
            const std::vector<int> ctx = {3, 4, 5};
            const DecodeResult van =
                decode_onestep(p, ctx, block_cfg(DecodeMode::Onestep, CacheStrategy::Vanilla, B, N), vocab);
            const DecodeResult fus =
                decode_onestep(p, ctx, block_cfg(DecodeMode::Onestep, CacheStrategy::Fused, B, N), vocab);
            CHECK(van.tokens == fus.tokens);
            CHECK(van.blocks_generated == fus.blocks_generated);
            const int np = van.blocks_generated;
            CHECK(van.ledger.forward_passes == 2 * np);
            CHECK(fus.ledger.forward_passes == np);
        }
    }
}

TEST_CASE("multistep with tau=0 reduces to one step per block") {
    const Vocabulary vocab = bare_vocab(9);
    const ModelParams p = init_params(tiny_config(vocab.size()), 3);
    const std::vector<int> ctx = {4, 5};
    const int N = 3, B = 4;
    const DecodeResult ms = decode_multistep(
        p, ctx, block_cfg(DecodeMode::Multistep, CacheStrategy::Vanilla, B, N, 0.0), vocab);
    const DecodeResult os = decode_onestep(
        p, ctx, block_cfg(DecodeMode::Onestep, CacheStrategy::Vanilla, B, N), vocab);
    CHECK(ms.tokens == os.tokens);
    CHECK(ms.ledger.forward_passes == 2 * ms.blocks_generated);
    for (const CommitEvent& e : ms.trace) CHECK(e.step == 1);
}

namespace {

// steps three sessions in lockstep and asserts logit agreement
class ComparingBackend : public BlockQueryBackend {
  public:
    ComparingBackend(std::vector<BlockDecodeSession*> sessions) : sessions_(std::move(sessions)) {}
    std::vector<std::vector<double>> query(const std::vector<int>& state) override {
        auto first = sessions_[0]->query(state);
        for (size_t s = 1; s < sessions_.size(); ++s) {
            sessions_[s]->query(state);
            const Tensor& a = sessions_[0]->last_block_logits();
            const Tensor& b = sessions_[s]->last_block_logits();
            for (size_t i = 0; i < a.data.size(); ++i) {
                const double diff = std::abs(a.data[i] - b.data[i]);
                if (diff > max_diff_) max_diff_ = diff;
            }
        }
        return first;
    }
    void commit_block(const std::vector<int>& tokens) override {
        for (auto* s : sessions_) s->commit_block(tokens);
    }
    double max_diff() const { return max_diff_; }

  private:
    std::vector<BlockDecodeSession*> sessions_;
    double max_diff_ = 0.0;
};

}  // namespace

TEST_CASE("cache strategies agree on tokens and logits within 1e-9") {
    const Vocabulary vocab = bare_vocab(12);
    const ModelParams p = init_params(tiny_config(vocab.size()), 19);
    Rng rng(5);
    for (int trial = 0; trial < 6; ++trial) {
        std::vector<int> ctx;
        const int pl = 1 + static_cast<int>(rng.next_below(6));
        for (int i = 0; i < pl; ++i) ctx.push_back(3 + static_cast<int>(rng.next_below(8)));
        const int B = 1 + static_cast<int>(rng.next_below(5));
        const DecodeConfig cfg = block_cfg(DecodeMode::Multistep, CacheStrategy::None, B, 3, 0.8);
        BlockDecodeSession none(p, ctx, cfg, vocab);
        DecodeConfig cv = cfg;
        cv.strategy = CacheStrategy::Vanilla;
        BlockDecodeSession van(p, ctx, cv, vocab);
        DecodeConfig cf = cfg;
        cf.strategy = CacheStrategy::Fused;
        BlockDecodeSession fus(p, ctx, cf, vocab);
        ComparingBackend cmp({&none, &van, &fus});
        run_block_commit_loop(cmp, cfg.max_blocks, B, cfg.tau, vocab.eos_id, vocab.mask_id);
        CHECK(cmp.max_diff() <= 1e-9);
    }
}

TEST_CASE("fused ledger records replace exactly two vanilla passes") {
    const Vocabulary vocab = bare_vocab(10);
    const ModelParams p = init_params(tiny_config(vocab.size()), 23);
    const std::vector<int> ctx(10, 4);  // P=10
    const int B = 4, N = 3;
    const DecodeResult van =
        decode_onestep(p, ctx, block_cfg(DecodeMode::Onestep, CacheStrategy::Vanilla, B, N), vocab);
    const DecodeResult fus =
        decode_onestep(p, ctx, block_cfg(DecodeMode::Onestep, CacheStrategy::Fused, B, N), vocab);
    const LedgerCompareReport rep = ledger_compare(van.ledger, fus.ledger);
    for (const std::string& d : rep.discrepancies) INFO(d);
    CHECK(rep.ok);
    CHECK(rep.vanilla_passes == 2 * rep.fused_passes);
    CHECK(rep.fused_total == rep.vanilla_total - rep.final_update_flops);
    // the analytic per-pass costs of the fused schedule
    const FlopsModel fm = p.config.flops_model();
    const int P = static_cast<int>(ctx.size());
    for (const PassRecord& r : fus.ledger.records) CHECK(r.flops == r.q * fm.g(r.context_len));
    CHECK(fus.ledger.records[0].context_len == P + B);

    // a perturbed ledger must produce a discrepancy report
    FlopsLedger bad = fus.ledger;
    bad.records[1].flops += 1;
    const LedgerCompareReport rep2 = ledger_compare(van.ledger, bad);
    CHECK_FALSE(rep2.ok);
    CHECK_FALSE(rep2.discrepancies.empty());
}

TEST_CASE("multistep trajectory equals teacher trajectory collection") {
    const Vocabulary vocab = bare_vocab(12);
    const ModelParams p = init_params(tiny_config(vocab.size()), 29);
    const std::vector<int> ctx = {3, 7, 5};
    DistillConfig dc;
    dc.tau = 0.85;
    dc.block_size = 4;
    dc.max_blocks = 3;
    const TrajectoryResult tr = collect_teacher_trajectory(p, ctx, dc, vocab);
    const DecodeResult ms = decode_multistep(
        p, ctx, block_cfg(DecodeMode::Multistep, CacheStrategy::Fused, 4, 3, 0.85), vocab);
    CHECK(tr.decoded == ms.tokens);
}

TEST_CASE("throughput: AR reports TPF exactly 1, onestep fused reports B") {
    const Vocabulary vocab = bare_vocab(10);
    const ModelParams p = init_params(tiny_config(vocab.size()), 31);
    const ReportGrammar g = default_grammar();
    std::vector<ReportRecord> recs;
    for (int i = 0; i < 4; ++i) {
        ReportRecord r;
        r.context_tokens = {3, 4, static_cast<int>(5 + i)};
        r.response_tokens = {6, vocab.eos_id};
        r.labels = {};
        recs.push_back(r);
    }
    const ThroughputReport ar =
        measure_throughput(p, recs, block_cfg(DecodeMode::Ar, CacheStrategy::Vanilla, 4, 3), vocab);
    CHECK(ar.tpf == 1.0);
    for (int B : {4, 8}) {
        const ThroughputReport os = measure_throughput(
            p, recs, block_cfg(DecodeMode::Onestep, CacheStrategy::Fused, B, 3), vocab);
        CHECK(os.tpf == static_cast<double>(B));
    }
    CHECK_THROWS_AS(measure_throughput(p, {}, block_cfg(DecodeMode::Ar, CacheStrategy::Vanilla, 4, 3), vocab),
                    ConfigError);
}
