#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "blockdiff/corpus.hpp"

namespace blockdiff {

enum class SegKind { Context, Clean, Noisy };

struct Segment {
    SegKind kind;
    int block;  // -1 for context
};

enum class LayoutKind { Ar, Rad, Dcd, FullDuplication };

// Token / position / attention layout for one training or alignment pass.
//
// Mask rules for the diffusion layouts:
//   context row i     -> columns 0..i (causal)
//   clean block k     -> context + clean blocks j <= k (bidirectional in-block)
//   noisy block k     -> context + clean blocks j < k + own noisy block
// Noisy copies reuse the position ids of their clean counterparts.
struct SequenceLayout {
    LayoutKind kind = LayoutKind::Ar;
    std::vector<int> token_ids;
    std::vector<int> position_ids;
    std::vector<uint8_t> attn;       // row-major [len x len], 1 = may attend
    std::vector<uint8_t> loss_mask;  // per position
    std::vector<int> loss_targets;   // token id per position, -1 where unused
    std::vector<Segment> segments;
    int block_size = 0;
    int n_blocks = 0;

    int len() const { return static_cast<int>(token_ids.size()); }
    bool allowed(int row, int col) const {
        return attn[static_cast<size_t>(row) * static_cast<size_t>(len()) +
                    static_cast<size_t>(col)] != 0;
    }
    int row_context_len(int row) const;  // number of allowed columns in a row
    std::string mask_grid() const;       // text rendering for inspection
};

SequenceLayout build_ar_layout(const std::vector<int>& context, const std::vector<int>& response,
                               int max_positions = std::numeric_limits<int>::max());

// Response is right-padded with pad_id to a multiple of B; the noisy copy of
// block k gets ceil(ratio_k * B) positions replaced by mask_id, chosen
// uniformly by seed. Loss covers masked noisy positions whose clean
// counterpart is not padding.
SequenceLayout build_rad_layout(const std::vector<int>& context, const std::vector<int>& response,
                                int block_size, const std::vector<double>& mask_ratio_per_block,
                                uint64_t seed, const Vocabulary& vocab,
                                int max_positions = std::numeric_limits<int>::max());

// RAD layout with every noisy block fully masked and the clean blocks filled
// with committed pseudo-label blocks (each exactly block_size long).
SequenceLayout build_dcd_layout(const std::vector<int>& context,
                                const std::vector<std::vector<int>>& pseudo_blocks, int block_size,
                                const Vocabulary& vocab,
                                int max_positions = std::numeric_limits<int>::max());

// Baseline that duplicates the context as well, treating it as one extra
// block of size P under the same mask rules (clean copy bidirectional,
// noisy copy self-attending). Used only for FLOPs comparisons.
SequenceLayout build_full_duplication_layout(const std::vector<int>& context,
                                             const std::vector<int>& response, int block_size,
                                             const Vocabulary& vocab);

// Analytic multiply-add model for the transformer forward pass. g(ell) is the
// per-token cost at context length ell:
//   g(ell) = n_layers * (4*d^2 + 2*ffn_mult*d^2 + 2*ell*d)
// covering the QKV and output projections, the two FFN matmuls, and the
// attention score/mix terms. A pass of q tokens all attending ell columns
// costs F(q, ell) = q * g(ell). Embeddings and the vocabulary head are not
// counted on either side of the analytic/empirical comparison.
struct FlopsModel {
    int d_model = 0;
    int n_layers = 0;
    int ffn_mult = 0;

    int64_t per_token_fixed() const {
        const int64_t d = d_model;
        return static_cast<int64_t>(n_layers) * (4 * d * d + 2 * ffn_mult * d * d);
    }
    int64_t per_token_per_column() const {
        return static_cast<int64_t>(n_layers) * 2 * d_model;
    }
    int64_t g(int64_t ell) const { return per_token_fixed() + per_token_per_column() * ell; }
    int64_t pass_flops(int64_t q, int64_t ell) const { return q * g(ell); }
    int64_t layout_flops(const SequenceLayout& layout) const;
};

struct RadSavings {
    int64_t rad_flops = 0;
    int64_t full_duplication_flops = 0;
    double saved_fraction = 0.0;  // 1 - rad/full
};

// Analytic training-FLOPs saving of the response-only duplication layout
// over the full-duplication baseline, at context length P and response
// length R (R > 0) with block size B.
RadSavings rad_savings(const FlopsModel& model, int context_len, int response_len, int block_size);

}  // namespace blockdiff
