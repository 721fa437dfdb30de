#include "blockdiff/layout.hpp"

#include <cmath>
#include <sstream>

namespace blockdiff {

int SequenceLayout::row_context_len(int row) const {
    int n = 0;
    for (int c = 0; c < len(); ++c)
        if (allowed(row, c)) ++n;
    return n;
}

std::string SequenceLayout::mask_grid() const {
    std::ostringstream os;
    for (int r = 0; r < len(); ++r) {
        for (int c = 0; c < len(); ++c) os << (allowed(r, c) ? 'x' : '.');
        os << "\n";
    }
    return os.str();
}

namespace {

struct LayoutBuilder {
    SequenceLayout L;

    void reserve(int n) {
        L.attn.assign(static_cast<size_t>(n) * static_cast<size_t>(n), 0);
        L.loss_mask.assign(static_cast<size_t>(n), 0);
        L.loss_targets.assign(static_cast<size_t>(n), -1);
    }
    void allow(int row, int col) {
        L.attn[static_cast<size_t>(row) * L.token_ids.size() + static_cast<size_t>(col)] = 1;
    }
    void allow_range(int row, int begin, int end) {
        for (int c = begin; c < end; ++c) allow(row, c);
    }
};

void check_positions(const SequenceLayout& L, int max_positions) {
    for (int p : L.position_ids)
        if (p >= max_positions)
            throw RangeError("layout: position " + std::to_string(p) + " exceeds max_positions " +
                             std::to_string(max_positions));
}

}  // namespace

SequenceLayout build_ar_layout(const std::vector<int>& context, const std::vector<int>& response,
                               int max_positions) {
    LayoutBuilder b;
    b.L.kind = LayoutKind::Ar;
    const int P = static_cast<int>(context.size());
    const int R = static_cast<int>(response.size());
    b.L.token_ids = context;
    b.L.token_ids.insert(b.L.token_ids.end(), response.begin(), response.end());
    const int n = P + R;
    for (int i = 0; i < n; ++i) b.L.position_ids.push_back(i);
    for (int i = 0; i < P; ++i) b.L.segments.push_back({SegKind::Context, -1});
    for (int i = 0; i < R; ++i) b.L.segments.push_back({SegKind::Clean, 0});
    b.reserve(n);
    for (int i = 0; i < n; ++i) b.allow_range(i, 0, i + 1);
    // rows predicting response tokens carry the loss
    for (int i = P - 1; i < n - 1; ++i) {
        if (i < 0) continue;
        b.L.loss_mask[static_cast<size_t>(i)] = 1;
        b.L.loss_targets[static_cast<size_t>(i)] = b.L.token_ids[static_cast<size_t>(i + 1)];
    }
    check_positions(b.L, max_positions);
    return b.L;
}

SequenceLayout build_rad_layout(const std::vector<int>& context, const std::vector<int>& response,
                                int block_size, const std::vector<double>& mask_ratio_per_block,
                                uint64_t seed, const Vocabulary& vocab, int max_positions) {
    if (block_size <= 0) throw ConfigError("build_rad_layout: block size must be positive");
    const int P = static_cast<int>(context.size());
    const int R = static_cast<int>(response.size());
    LayoutBuilder b;
    b.L.kind = LayoutKind::Rad;
    b.L.block_size = block_size;
    if (R == 0) {
        b.L.token_ids = context;
        for (int i = 0; i < P; ++i) {
            b.L.position_ids.push_back(i);
            b.L.segments.push_back({SegKind::Context, -1});
        }
        b.reserve(P);
        for (int i = 0; i < P; ++i) b.allow_range(i, 0, i + 1);
        check_positions(b.L, max_positions);
        return b.L;
    }
    const int N = (R + block_size - 1) / block_size;
    const int padded = N * block_size;
    if (static_cast<int>(mask_ratio_per_block.size()) != N)
        throw ConfigError("build_rad_layout: need one mask ratio per block (" +
                          std::to_string(N) + ")");
    for (double r : mask_ratio_per_block)
        if (!(r > 0.0 && r <= 1.0))
            throw ConfigError("build_rad_layout: mask ratios must lie in (0,1]");
    b.L.n_blocks = N;

    std::vector<int> clean(response);
    clean.resize(static_cast<size_t>(padded), vocab.pad_id);

    const int n = P + 2 * padded;
    b.L.token_ids = context;
    b.L.token_ids.insert(b.L.token_ids.end(), clean.begin(), clean.end());
    std::vector<int> noisy(clean);
    std::vector<uint8_t> masked(static_cast<size_t>(padded), 0);
    for (int k = 0; k < N; ++k) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(k)));
        const int m = static_cast<int>(
            std::ceil(mask_ratio_per_block[static_cast<size_t>(k)] * block_size));
        for (int idx : rng.sample_indices(block_size, m)) {
            noisy[static_cast<size_t>(k * block_size + idx)] = vocab.mask_id;
            masked[static_cast<size_t>(k * block_size + idx)] = 1;
        }
    }
    b.L.token_ids.insert(b.L.token_ids.end(), noisy.begin(), noisy.end());

    for (int i = 0; i < P; ++i) {
        b.L.position_ids.push_back(i);
        b.L.segments.push_back({SegKind::Context, -1});
    }
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < block_size; ++i) {
            b.L.position_ids.push_back(P + k * block_size + i);
            b.L.segments.push_back({SegKind::Clean, k});
        }
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < block_size; ++i) {
            // noisy copies reuse the clean positions
            b.L.position_ids.push_back(P + k * block_size + i);
            b.L.segments.push_back({SegKind::Noisy, k});
        }

    b.reserve(n);
    for (int i = 0; i < P; ++i) b.allow_range(i, 0, i + 1);
    for (int k = 0; k < N; ++k) {
        const int clean_row0 = P + k * block_size;
        for (int i = 0; i < block_size; ++i)
            b.allow_range(clean_row0 + i, 0, P + (k + 1) * block_size);
        const int noisy_row0 = P + padded + k * block_size;
        for (int i = 0; i < block_size; ++i) {
            b.allow_range(noisy_row0 + i, 0, P + k * block_size);
            b.allow_range(noisy_row0 + i, P + padded + k * block_size,
                          P + padded + (k + 1) * block_size);
        }
    }
    for (int j = 0; j < padded; ++j) {
        const int row = P + padded + j;
        if (masked[static_cast<size_t>(j)] && clean[static_cast<size_t>(j)] != vocab.pad_id) {
            b.L.loss_mask[static_cast<size_t>(row)] = 1;
            b.L.loss_targets[static_cast<size_t>(row)] = clean[static_cast<size_t>(j)];
        }
    }
    check_positions(b.L, max_positions);
    return b.L;
}

SequenceLayout build_dcd_layout(const std::vector<int>& context,
                                const std::vector<std::vector<int>>& pseudo_blocks, int block_size,
                                const Vocabulary& vocab, int max_positions) {
    if (block_size <= 0) throw ConfigError("build_dcd_layout: block size must be positive");
    std::vector<int> response;
    for (const auto& blk : pseudo_blocks) {
        if (static_cast<int>(blk.size()) != block_size)
            throw DimError("build_dcd_layout: pseudo block length " +
                           std::to_string(blk.size()) + " != block size " +
                           std::to_string(block_size));
        response.insert(response.end(), blk.begin(), blk.end());
    }
    if (response.empty()) {
        SequenceLayout L = build_rad_layout(context, response, block_size, {}, 0, vocab,
                                            max_positions);
        L.kind = LayoutKind::Dcd;
        return L;
    }
    const std::vector<double> ratios(pseudo_blocks.size(), 1.0);
    SequenceLayout L =
        build_rad_layout(context, response, block_size, ratios, /*seed=*/0, vocab, max_positions);
    L.kind = LayoutKind::Dcd;
    return L;
}

SequenceLayout build_full_duplication_layout(const std::vector<int>& context,
                                             const std::vector<int>& response, int block_size,
                                             const Vocabulary& vocab) {
    if (block_size <= 0)
        throw ConfigError("build_full_duplication_layout: block size must be positive");
    const int P = static_cast<int>(context.size());
    const int R = static_cast<int>(response.size());
    const int N = R == 0 ? 0 : (R + block_size - 1) / block_size;
    const int padded = N * block_size;
    std::vector<int> clean(response);
    clean.resize(static_cast<size_t>(padded), vocab.pad_id);

    LayoutBuilder b;
    b.L.kind = LayoutKind::FullDuplication;
    b.L.block_size = block_size;
    b.L.n_blocks = N;
    const int n = 2 * (P + padded);

    auto push_span = [&](const std::vector<int>& toks, int pos0, SegKind kind, int block,
                         bool masked) {
        for (size_t i = 0; i < toks.size(); ++i) {
            b.L.token_ids.push_back(masked ? vocab.mask_id : toks[i]);
            b.L.position_ids.push_back(pos0 + static_cast<int>(i));
            b.L.segments.push_back({kind, block});
        }
    };
    push_span(context, 0, SegKind::Clean, -1, false);
    for (int k = 0; k < N; ++k)
        push_span({clean.begin() + k * block_size, clean.begin() + (k + 1) * block_size},
                  P + k * block_size, SegKind::Clean, k, false);
    push_span(context, 0, SegKind::Noisy, -1, true);
    for (int k = 0; k < N; ++k)
        push_span({clean.begin() + k * block_size, clean.begin() + (k + 1) * block_size},
                  P + k * block_size, SegKind::Noisy, k, true);

    b.reserve(n);
    const int noisy0 = P + padded;
    // clean context block: bidirectional within itself
    for (int i = 0; i < P; ++i) b.allow_range(i, 0, P);
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < block_size; ++i)
            b.allow_range(P + k * block_size + i, 0, P + (k + 1) * block_size);
    // noisy context block: no preceding clean blocks, own copy only
    for (int i = 0; i < P; ++i) b.allow_range(noisy0 + i, noisy0, noisy0 + P);
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < block_size; ++i) {
            const int row = noisy0 + P + k * block_size + i;
            b.allow_range(row, 0, P + k * block_size);
            b.allow_range(row, noisy0 + P + k * block_size, noisy0 + P + (k + 1) * block_size);
        }
    for (int j = 0; j < padded; ++j) {
        const int row = noisy0 + P + j;
        if (clean[static_cast<size_t>(j)] != vocab.pad_id) {
            b.L.loss_mask[static_cast<size_t>(row)] = 1;
            b.L.loss_targets[static_cast<size_t>(row)] = clean[static_cast<size_t>(j)];
        }
    }
    return b.L;
}

int64_t FlopsModel::layout_flops(const SequenceLayout& layout) const {
    int64_t total = 0;
    for (int r = 0; r < layout.len(); ++r) total += g(layout.row_context_len(r));
    return total;
}

RadSavings rad_savings(const FlopsModel& model, int context_len, int response_len,
                       int block_size) {
    if (context_len < 0) throw ConfigError("rad_savings: context length must be >= 0");
    if (response_len <= 0) throw ConfigError("rad_savings: response length must be positive");
    if (block_size <= 0) throw ConfigError("rad_savings: block size must be positive");
    const int64_t P = context_len;
    const int64_t N = (response_len + block_size - 1) / block_size;
    const int64_t B = block_size;

    RadSavings out;
    // causal context rows + clean and noisy response blocks
    int64_t rad = 0;
    for (int64_t i = 1; i <= P; ++i) rad += model.g(i);
    for (int64_t k = 1; k <= N; ++k) rad += 2 * B * model.g(P + k * B);
    // baseline: both context copies cost P rows at context length P
    int64_t full = 2 * P * model.g(P);
    for (int64_t k = 1; k <= N; ++k) full += 2 * B * model.g(P + k * B);

    out.rad_flops = rad;
    out.full_duplication_flops = full;
    out.saved_fraction = 1.0 - static_cast<double>(rad) / static_cast<double>(full);
    return out;
}

}  // namespace blockdiff
