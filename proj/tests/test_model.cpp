#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "blockdiff/kernels.hpp"
#include "blockdiff/model.hpp"

using namespace blockdiff;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 13;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.ffn_mult = 2;
    cfg.max_positions = 40;
    return cfg;
}

std::vector<uint8_t> causal_mask(int n) {
    std::vector<uint8_t> m(static_cast<size_t>(n) * static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) m[static_cast<size_t>(i * n + j)] = 1;
    return m;
}

std::vector<int> iota(int n, int start = 0) {
    std::vector<int> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = start + i;
    return v;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig cfg = tiny_config();
    cfg.n_heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.vocab_size = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("init is deterministic per seed, different across seeds") {
    const ModelConfig cfg = tiny_config();
    ModelParams a = init_params(cfg, 7);
    ModelParams b = init_params(cfg, 7);
    ModelParams c = init_params(cfg, 8);
    std::vector<const Tensor*> ta, tb, tc;
    a.for_each_named([&](const std::string&, Tensor& t) { ta.push_back(&t); });
    b.for_each_named([&](const std::string&, Tensor& t) { tb.push_back(&t); });
    c.for_each_named([&](const std::string&, Tensor& t) { tc.push_back(&t); });
    bool equal_ab = true, equal_ac = true;
    for (size_t i = 0; i < ta.size(); ++i) {
        equal_ab = equal_ab && ta[i]->data == tb[i]->data;
        equal_ac = equal_ac && ta[i]->data == tc[i]->data;
    }
    CHECK(equal_ab);
    CHECK_FALSE(equal_ac);
}

TEST_CASE("logits at init are near-uniform: row entropy within 10% of ln V") {
    const ModelConfig cfg = tiny_config();
    const ModelParams p = init_params(cfg, 3);
    const int n = 8;
    const auto out = forward(p, iota(n, 3), iota(n), causal_mask(n));
    for (int r = 0; r < n; ++r) {
        std::vector<double> probs(static_cast<size_t>(cfg.vocab_size));
        kernels::softmax_masked_row(out.logits.row_ptr(r), nullptr, cfg.vocab_size, probs.data());
        double h = 0.0;
        for (double q : probs)
            if (q > 0) h -= q * std::log(q);
        CHECK(h > 0.9 * std::log(cfg.vocab_size));
        CHECK(h <= 1.000001 * std::log(cfg.vocab_size));
    }
}

TEST_CASE("masking soundness: perturbing an excluded token leaves logits bitwise unchanged") {
    const ModelConfig cfg = tiny_config();
    ModelParams p = init_params(cfg, 11);
    const int n = 7;
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        // random mask; one column excluded from every other row so the
        // perturbed token is unreachable even transitively
        std::vector<uint8_t> mask(static_cast<size_t>(n * n), 0);
        for (int i = 0; i < n; ++i) {
            mask[static_cast<size_t>(i * n + i)] = 1;
            for (int j = 0; j < n; ++j)
                if (rng.next_bernoulli(0.4)) mask[static_cast<size_t>(i * n + j)] = 1;
        }
        const int excluded = static_cast<int>(rng.next_below(n));
        for (int i = 0; i < n; ++i)
            if (i != excluded) mask[static_cast<size_t>(i * n + excluded)] = 0;

        std::vector<int> tokens = iota(n, 1);
        const Tensor base = forward(p, tokens, iota(n), mask).logits;
        std::vector<int> perturbed = tokens;
        perturbed[static_cast<size_t>(excluded)] =
            (tokens[static_cast<size_t>(excluded)] + 5) % cfg.vocab_size;
        const Tensor alt = forward(p, perturbed, iota(n), mask).logits;
        for (int r = 0; r < n; ++r) {
            if (r == excluded) continue;
            for (int v = 0; v < cfg.vocab_size; ++v) CHECK(base.at(r, v) == alt.at(r, v));
        }
    }
}

TEST_CASE("errors: bad positions, all-false rows, bad tokens") {
    const ModelConfig cfg = tiny_config();
    const ModelParams p = init_params(cfg, 1);
    CHECK_THROWS_AS(forward(p, {1, 2}, {0, cfg.max_positions}, causal_mask(2)), RangeError);
    std::vector<uint8_t> dark(4, 0);
    dark[0] = 1;
    CHECK_THROWS_AS(forward(p, {1, 2}, {0, 1}, dark), LayoutError);
    CHECK_THROWS_AS(forward(p, {1, cfg.vocab_size}, {0, 1}, causal_mask(2)), RangeError);
}

TEST_CASE("chunked cached forward equals one-pass forward") {
    const ModelConfig cfg = tiny_config();
    const ModelParams p = init_params(cfg, 5);
    const int n = 12, split = 5;
    const std::vector<int> tokens = iota(n, 1);
    const Tensor whole = forward(p, tokens, iota(n), causal_mask(n)).logits;

    BlockKVCache cache(cfg.n_layers, CacheStrategy::Vanilla);
    const std::vector<int> t1(tokens.begin(), tokens.begin() + split);
    const Tensor part1 = forward(p, t1, iota(split), causal_mask(split), &cache,
                                 std::vector<uint8_t>(static_cast<size_t>(split), 1))
                             .logits;
    CHECK(cache.cached_len == split);
    const std::vector<int> t2(tokens.begin() + split, tokens.end());
    const int q2 = n - split;
    std::vector<uint8_t> attn2(static_cast<size_t>(q2) * static_cast<size_t>(n), 0);
    for (int i = 0; i < q2; ++i)
        for (int j = 0; j <= split + i; ++j) attn2[static_cast<size_t>(i * n + j)] = 1;
    const Tensor part2 = forward(p, t2, iota(q2, split), attn2, &cache,
                                 std::vector<uint8_t>(static_cast<size_t>(q2), 1))
                             .logits;
    CHECK(cache.cached_len == n);
    for (int r = 0; r < split; ++r)
        for (int v = 0; v < cfg.vocab_size; ++v)
            CHECK(std::abs(part1.at(r, v) - whole.at(r, v)) <= 1e-9);
    for (int r = 0; r < q2; ++r)
        for (int v = 0; v < cfg.vocab_size; ++v)
            CHECK(std::abs(part2.at(r, v) - whole.at(split + r, v)) <= 1e-9);
}

TEST_CASE("forward is invariant to the physical ordering of rows") {
    const ModelConfig cfg = tiny_config();
    const ModelParams p = init_params(cfg, 9);
    const int n = 6;
    std::vector<uint8_t> full(static_cast<size_t>(n * n), 1);
    const std::vector<int> tokens = {4, 7, 2, 9, 1, 5};
    const Tensor base = forward(p, tokens, iota(n), full).logits;
    const std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    std::vector<int> ptokens(static_cast<size_t>(n)), ppos(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        ptokens[static_cast<size_t>(i)] = tokens[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        ppos[static_cast<size_t>(i)] = perm[static_cast<size_t>(i)];
    }
    const Tensor permuted = forward(p, ptokens, ppos, full).logits;
    // column accumulation order changes with the permutation, so equality is
    // up to rounding noise
    for (int i = 0; i < n; ++i)
        for (int v = 0; v < cfg.vocab_size; ++v)
            CHECK(permuted.at(i, v) ==
                  doctest::Approx(base.at(perm[static_cast<size_t>(i)], v)).epsilon(1e-12));
}

TEST_CASE("train-path forward matches inference forward bitwise") {
    const ModelConfig cfg = tiny_config();
    const ModelParams p = init_params(cfg, 13);
    const int n = 9;
    const auto mask = causal_mask(n);
    const std::vector<int> tokens = iota(n, 2);
    const Tensor infer = forward(p, tokens, iota(n), mask).logits;
    Tape tape;
    const ParamNodes nodes = register_params(tape, p);
    const Tensor train = tape.value(forward_train(tape, nodes, cfg, tokens, iota(n), mask));
    REQUIRE(train.shape == infer.shape);
    for (size_t i = 0; i < train.data.size(); ++i) CHECK(train.data[i] == infer.data[i]);
}

TEST_CASE("ledger counts the analytic flops for uniform and mixed passes") {
    const ModelConfig cfg = tiny_config();
    const ModelParams p = init_params(cfg, 17);
    const FlopsModel fm = cfg.flops_model();
    FlopsLedger ledger;
    const int n = 6;
    forward(p, iota(n, 1), iota(n), causal_mask(n), nullptr, {}, &ledger);
    CHECK(ledger.forward_passes == 1);
    int64_t expect = 0;
    for (int i = 1; i <= n; ++i) expect += fm.g(i);
    CHECK(ledger.multiply_adds == expect);
    int64_t rec_sum = 0;
    for (const PassRecord& r : ledger.records) rec_sum += r.flops;
    CHECK(rec_sum == expect);
}

TEST_CASE("checkpoint round trip is exact; bad files are rejected") {
    const ModelConfig cfg = tiny_config();
    ModelParams p = init_params(cfg, 31);
    const auto path = (std::filesystem::temp_directory_path() / "bd_model.ckpt").string();
    save_checkpoint(p, path);
    ModelParams q = load_checkpoint(path);
    std::vector<const Tensor*> tp, tq;
    p.for_each_named([&](const std::string&, Tensor& t) { tp.push_back(&t); });
    q.for_each_named([&](const std::string&, Tensor& t) { tq.push_back(&t); });
    for (size_t i = 0; i < tp.size(); ++i) CHECK(tp[i]->data == tq[i]->data);
    CHECK(q.config.d_model == cfg.d_model);
    CHECK_THROWS_AS(load_checkpoint(path + ".missing"), DependencyError);
    {
        std::ofstream bad(path);
        bad << "not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    std::filesystem::remove(path);
}
