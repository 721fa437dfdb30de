#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "blockdiff/metrics.hpp"

using namespace blockdiff;

TEST_CASE("rouge-l spec values") {
    CHECK(rouge_l({4, 5, 6}, {4, 5, 6}) == 1.0);
    CHECK(rouge_l({1, 2, 3}, {4, 5, 6}) == 0.0);
    // hyp (a,c,e) vs ref (a,b,c,d,e): LCS 3, P=1, R=0.6, F=0.75
    CHECK(rouge_l({10, 12, 14}, {10, 11, 12, 13, 14}) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(rouge_l({}, {}) == 0.0);
    CHECK(rouge_l({1}, {}) == 0.0);
}

TEST_CASE("rouge-l properties: symmetry at equal lengths, bounded, monotone under deletion") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.next_below(8));
        std::vector<int> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            a[static_cast<size_t>(i)] = static_cast<int>(rng.next_below(5));
            b[static_cast<size_t>(i)] = static_cast<int>(rng.next_below(5));
        }
        const double ab = rouge_l(a, b);
        CHECK(ab == rouge_l(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
    }
    // deleting a common token from the hypothesis cannot raise the score
    const std::vector<int> ref = {1, 2, 3, 4, 5};
    std::vector<int> hyp = {1, 2, 3, 4, 5};
    double prev = rouge_l(hyp, ref);
    while (hyp.size() > 1) {
        hyp.pop_back();
        const double cur = rouge_l(hyp, ref);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

namespace {
struct Fixture {
    ReportGrammar g = default_grammar();
    Vocabulary v = build_vocabulary(g);
};
}  // namespace

TEST_CASE("finding f1: perfect reproduction, empty response, one extra assertion") {
    Fixture f;
    const ReportRecord rec = generate_sample(f.g, f.v, 4242, true);
    const FindingScore perfect = finding_f1(rec.response_tokens, rec.labels, f.g, f.v);
    int abnormal = 0;
    for (int l : rec.labels) abnormal += l != kNormalLabel ? 1 : 0;
    if (abnormal > 0) {
        CHECK(perfect.precision == 1.0);
        CHECK(perfect.recall == 1.0);
        CHECK(perfect.f1 == 1.0);
    } else {
        CHECK(perfect.f1 == 1.0);  // empty-vs-empty convention
    }
    CHECK(perfect.garbage_fraction == 0.0);

    const FindingScore empty = finding_f1({f.v.eos_id}, {0, kNormalLabel, 1, kNormalLabel,
                                                         kNormalLabel, kNormalLabel},
                                          f.g, f.v);
    CHECK(empty.recall == 0.0);
    CHECK_FALSE(empty.precision_defined);
    CHECK(empty.precision == 0.0);

    // gold has two findings; response asserts those two plus one extra
    std::vector<int> labels(6, kNormalLabel);
    labels[0] = 0;
    labels[1] = 1;
    std::vector<int> resp;
    auto add_phrase = [&](int region, int finding) {
        for (const std::string& w :
             f.g.regions[static_cast<size_t>(region)].findings[static_cast<size_t>(finding)].variants[0])
            resp.push_back(f.v.id_of(w));
    };
    add_phrase(0, 0);
    add_phrase(1, 1);
    add_phrase(2, 2);  // hallucinated
    resp.push_back(f.v.eos_id);
    const FindingScore s = finding_f1(resp, labels, f.g, f.v);
    CHECK(s.tp == 2);
    CHECK(s.fp == 1);
    CHECK(s.precision == doctest::Approx(2.0 / 3.0));
    CHECK(s.recall == 1.0);
    CHECK(s.false_positive_rate == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("finding f1 is invariant to assertion order") {
    Fixture f;
    std::vector<int> labels(6, kNormalLabel);
    labels[2] = 1;
    labels[4] = 0;
    auto phrase = [&](int region, int finding) {
        std::vector<int> out;
        for (const std::string& w :
             f.g.regions[static_cast<size_t>(region)].findings[static_cast<size_t>(finding)].variants[0])
            out.push_back(f.v.id_of(w));
        return out;
    };
    std::vector<int> a = phrase(2, 1);
    const std::vector<int> b = phrase(4, 0);
    std::vector<int> fwd = a;
    fwd.insert(fwd.end(), b.begin(), b.end());
    fwd.push_back(f.v.eos_id);
    std::vector<int> rev = b;
    rev.insert(rev.end(), a.begin(), a.end());
    rev.push_back(f.v.eos_id);
    const FindingScore sf = finding_f1(fwd, labels, f.g, f.v);
    const FindingScore sr = finding_f1(rev, labels, f.g, f.v);
    CHECK(sf.f1 == sr.f1);
    CHECK(sf.precision == sr.precision);
    CHECK(sf.recall == sr.recall);
}

TEST_CASE("garbage tokens are counted, incoherent spans parse to nothing") {
    Fixture f;
    // mix two variants of the same finding: words from each, valid as neither
    const int region = 0;
    const auto& variants = f.g.regions[0].findings[0].variants;
    REQUIRE(variants.size() >= 2);
    std::vector<int> resp = {f.v.id_of(f.g.regions[0].name), f.v.id_of(variants[0][1]),
                             f.v.id_of(variants[1].back()), f.v.eos_id};
    std::vector<int> labels(6, kNormalLabel);
    labels[region] = 0;
    const FindingScore s = finding_f1(resp, labels, f.g, f.v);
    CHECK(s.tp == 0);
    CHECK(s.recall == 0.0);
    CHECK(s.garbage_fraction > 0.0);
}

TEST_CASE("teacher perplexity: uniform scorer gives exactly V, single token gives 1/p") {
    Fixture f;
    ModelConfig cfg;
    cfg.vocab_size = 16;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.ffn_mult = 2;
    cfg.max_positions = 32;
    const ModelParams uniform = ModelParams::zeros_like(cfg);
    CHECK(teacher_ppl(uniform, {3, 4}, {5, 6, 7}) == doctest::Approx(16.0).epsilon(1e-12));
    // single-token response: ppl = 1/p(token)
    CHECK(teacher_ppl(uniform, {3}, {5}) == doctest::Approx(16.0).epsilon(1e-12));
    CHECK_THROWS_AS(teacher_ppl(uniform, {3}, {}), ConfigError);
}

TEST_CASE("teacher ppl of own greedy output is below shuffled output") {
    Fixture f;
    ModelConfig cfg;
    cfg.vocab_size = 16;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.ffn_mult = 2;
    cfg.max_positions = 48;
    const ModelParams p = init_params(cfg, 5);
    // greedy sample from the (random) model itself
    std::vector<int> ctx = {3, 4, 5};
    std::vector<int> greedy;
    {
        std::vector<int> seq = ctx;
        for (int t = 0; t < 10; ++t) {
            const int n = static_cast<int>(seq.size());
            std::vector<uint8_t> mask(static_cast<size_t>(n) * static_cast<size_t>(n), 0);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j <= i; ++j) mask[static_cast<size_t>(i * n + j)] = 1;
            std::vector<int> pos(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = i;
            const Tensor logits = forward(p, seq, pos, mask).logits;
            int best = 0;
            for (int v = 1; v < cfg.vocab_size; ++v)
                if (logits.at(n - 1, v) > logits.at(n - 1, best)) best = v;
            greedy.push_back(best);
            seq.push_back(best);
        }
    }
    std::vector<int> shuffled = greedy;
    Rng rng(9);
    rng.shuffle(shuffled);
    if (shuffled == greedy) std::rotate(shuffled.begin(), shuffled.begin() + 1, shuffled.end());
    CHECK(teacher_ppl(p, ctx, greedy) <= teacher_ppl(p, ctx, shuffled));
}
