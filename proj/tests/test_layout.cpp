#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "blockdiff/layout.hpp"

using namespace blockdiff;

namespace {

const ReportGrammar& grammar() {
    static ReportGrammar g = default_grammar();
    return g;
}
const Vocabulary& vocab() {
    static Vocabulary v = build_vocabulary(grammar());
    return v;
}

// the four SequenceLayout mask invariants, asserted directly on the matrix
void check_rad_invariants(const SequenceLayout& L, int P) {
    const int B = L.block_size, N = L.n_blocks;
    REQUIRE(L.len() == P + 2 * N * B);
    const int noisy0 = P + N * B;
    for (int k = 0; k < N; ++k) {
        for (int i = 0; i < B; ++i) {
            const int nrow = noisy0 + k * B + i;
            const int crow = P + k * B + i;
            CHECK(L.position_ids[static_cast<size_t>(nrow)] ==
                  L.position_ids[static_cast<size_t>(crow)]);
            for (int col = 0; col < L.len(); ++col) {
                const bool in_ctx = col < P;
                const bool in_clean_lt = col >= P && col < P + k * B;
                const bool in_own_noisy = col >= noisy0 + k * B && col < noisy0 + (k + 1) * B;
                CHECK(L.allowed(nrow, col) == (in_ctx || in_clean_lt || in_own_noisy));
                const bool in_clean_le = col >= P && col < P + (k + 1) * B;
                CHECK(L.allowed(crow, col) == (in_ctx || in_clean_le));
            }
        }
    }
    for (int i = 0; i < L.len(); ++i) {
        if (L.loss_mask[static_cast<size_t>(i)]) {
            CHECK(L.segments[static_cast<size_t>(i)].kind == SegKind::Noisy);
            CHECK(L.token_ids[static_cast<size_t>(i)] == vocab().mask_id);
        }
    }
}

}  // namespace

TEST_CASE("ar layout: 3+2 tokens give a 5x5 causal mask with response-row loss") {
    const SequenceLayout L = build_ar_layout({10, 11, 12}, {20, 21});
    REQUIRE(L.len() == 5);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(L.allowed(i, j) == (j <= i));
    CHECK(L.loss_mask == std::vector<uint8_t>{0, 0, 1, 1, 0});
    CHECK(L.loss_targets[2] == 20);
    CHECK(L.loss_targets[3] == 21);
    CHECK_THROWS_AS(build_ar_layout({1, 2, 3}, {4, 5}, /*max_positions=*/4), RangeError);
}

TEST_CASE("rad layout: P=4 R=8 B=4 hand-enumerated attention") {
    const std::vector<int> ctx = {3, 4, 5, 6};
    std::vector<int> resp(8, 7);
    resp.back() = vocab().eos_id;
    const SequenceLayout L = build_rad_layout(ctx, resp, 4, {0.5, 0.5}, 77, vocab());
    REQUIRE(L.len() == 4 + 16);
    check_rad_invariants(L, 4);
    // noisy block 1 rows attend context(4) + clean block 0(4) + own noisy(4)
    const int nrow = 4 + 8 + 4;  // first row of noisy block 1
    CHECK(L.row_context_len(nrow) == 12);
}

TEST_CASE("rad layout edge cases") {
    CHECK(build_rad_layout({1, 2}, {}, 4, {}, 0, vocab()).len() == 2);
    CHECK_THROWS_AS(build_rad_layout({1}, {2}, 0, {1.0}, 0, vocab()), ConfigError);
    CHECK_THROWS_AS(build_rad_layout({1}, {2}, 4, {1.5}, 0, vocab()), ConfigError);
    CHECK_THROWS_AS(build_rad_layout({1}, {2}, 4, {0.5, 0.5}, 0, vocab()), ConfigError);
    // ratio 1: every non-pad noisy position is masked and carries loss
    std::vector<int> resp(6, 8);
    const SequenceLayout L = build_rad_layout({1}, resp, 3, {1.0, 1.0}, 3, vocab());
    const int noisy0 = 1 + 6;
    for (int j = 0; j < 6; ++j) {
        CHECK(L.token_ids[static_cast<size_t>(noisy0 + j)] == vocab().mask_id);
        CHECK(L.loss_mask[static_cast<size_t>(noisy0 + j)] == 1);
    }
}

TEST_CASE("rad invariants hold for random shapes and seeds") {
    Rng rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        const int P = static_cast<int>(rng.next_below(6));
        const int R = 1 + static_cast<int>(rng.next_below(17));
        const int B = 1 + static_cast<int>(rng.next_below(6));
        const int N = (R + B - 1) / B;
        std::vector<double> ratios(static_cast<size_t>(N));
        for (double& r : ratios) r = rng.next_double_open_low();
        std::vector<int> ctx(static_cast<size_t>(P), 3);
        std::vector<int> resp(static_cast<size_t>(R), 9);
        const SequenceLayout L = build_rad_layout(ctx, resp, B, ratios, rng.next_u64(), vocab());
        check_rad_invariants(L, P);
        // mask count per block
        const int noisy0 = P + N * B;
        for (int k = 0; k < N; ++k) {
            int masked = 0;
            for (int i = 0; i < B; ++i)
                masked += L.token_ids[static_cast<size_t>(noisy0 + k * B + i)] == vocab().mask_id;
            CHECK(masked == static_cast<int>(std::ceil(ratios[static_cast<size_t>(k)] * B)));
        }
    }
}

TEST_CASE("dcd layout: fully masked noisy copy over committed clean blocks") {
    const std::vector<int> ctx = {3, 4};
    const std::vector<std::vector<int>> blocks = {{7, 8, 9}, {10, 11, vocab().eos_id}};
    const SequenceLayout L = build_dcd_layout(ctx, blocks, 3, vocab());
    CHECK(L.kind == LayoutKind::Dcd);
    REQUIRE(L.len() == 2 + 12);
    check_rad_invariants(L, 2);
    for (int j = 0; j < 6; ++j) {
        CHECK(L.token_ids[static_cast<size_t>(2 + 6 + j)] == vocab().mask_id);
        CHECK(L.token_ids[static_cast<size_t>(2 + j)] == blocks[static_cast<size_t>(j / 3)]
                                                             [static_cast<size_t>(j % 3)]);
    }
    CHECK_THROWS_AS(build_dcd_layout(ctx, {{1, 2}}, 3, vocab()), DimError);
    CHECK(build_dcd_layout(ctx, {}, 3, vocab()).len() == 2);
}

TEST_CASE("layout length identities") {
    const std::vector<int> ctx(5, 3);
    const std::vector<int> resp(13, 9);
    const int B = 4, N = 4;  // ceil(13/4)
    CHECK(build_ar_layout(ctx, resp).len() == 18);
    CHECK(build_rad_layout(ctx, resp, B, std::vector<double>(N, 1.0), 0, vocab()).len() ==
          5 + 2 * N * B);
    CHECK(build_full_duplication_layout(ctx, resp, B, vocab()).len() == 2 * (5 + N * B));
}

TEST_CASE("flops model: g is linear in ell and additive over passes") {
    const FlopsModel fm{64, 2, 4};
    CHECK(fm.pass_flops(0, 10) == 0);
    // doubling ell at fixed q doubles exactly the score/mix term
    const int64_t f1 = fm.pass_flops(3, 10);
    const int64_t f2 = fm.pass_flops(3, 20);
    CHECK(f2 - f1 == 3 * fm.per_token_per_column() * 10);
    CHECK(f2 - 2 * f1 == -3 * fm.per_token_fixed());
    // additivity
    CHECK(fm.pass_flops(3, 10) + fm.pass_flops(5, 10) == fm.pass_flops(8, 10));
}

TEST_CASE("layout flops equal the row-wise analytic sum") {
    const FlopsModel fm{8, 2, 2};
    const SequenceLayout L = build_ar_layout({1, 2, 3}, {4, 5});
    int64_t expect = 0;
    for (int i = 0; i < L.len(); ++i) expect += fm.g(i + 1);
    CHECK(fm.layout_flops(L) == expect);
}

TEST_CASE("rad savings: zero at P=0, strictly increasing in P, exceeds 70% eventually") {
    const FlopsModel fm{64, 2, 4};
    CHECK(rad_savings(fm, 0, 32, 8).saved_fraction == 0.0);
    double prev = -1.0;
    for (int p : {0, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 4096, 16384}) {
        const double s = rad_savings(fm, p, 32, 8).saved_fraction;
        if (p > 0) CHECK(s > prev);
        prev = s;
        CHECK(s < 0.75);
    }
    CHECK(rad_savings(fm, 1 << 20, 32, 8).saved_fraction > 0.7);
    CHECK_THROWS_AS(rad_savings(fm, -1, 32, 8), ConfigError);
    CHECK_THROWS_AS(rad_savings(fm, 5, 0, 8), ConfigError);
}

TEST_CASE("analytic rad savings match the materialized layouts") {
    const FlopsModel fm{16, 2, 2};
    for (int P : {0, 3, 10})
        for (int R : {4, 9})
            for (int B : {2, 4}) {
                std::vector<int> ctx(static_cast<size_t>(P), 3);
                std::vector<int> resp(static_cast<size_t>(R), 9);
                const int N = (R + B - 1) / B;
                const RadSavings s = rad_savings(fm, P, R, B);
                const SequenceLayout rad =
                    build_rad_layout(ctx, resp, B, std::vector<double>(N, 1.0), 0, vocab());
                const SequenceLayout full = build_full_duplication_layout(ctx, resp, B, vocab());
                CHECK(s.rad_flops == fm.layout_flops(rad));
                CHECK(s.full_duplication_flops == fm.layout_flops(full));
            }
}

TEST_CASE("mask grid rendering") {
    const SequenceLayout L = build_ar_layout({1}, {2});
    CHECK(L.mask_grid() == "x.\nxx\n");
}
