#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blockdiff/corpus.hpp"
#include "blockdiff/decoding.hpp"

namespace blockdiff {

// Explicitly enumerated joint distribution over V^L sequences, row-major in
// the sequence digits (last position fastest).
struct JointDistribution {
    int alphabet = 0;
    int length = 0;
    std::vector<double> probs;

    void validate() const;
    int64_t n_states() const;
    double prob(const std::vector<int>& seq) const;
    std::vector<int> state_to_seq(int64_t state) const;

    static JointDistribution product(const std::vector<std::vector<double>>& marginals);
    // mass split evenly over all constant sequences (a,a,...),(b,b,...)
    static JointDistribution correlated_copy(int alphabet, int length);
    // uniform over even-parity binary strings
    static JointDistribution parity(int length);
};

inline constexpr int kMasked = -1;

struct MaskedSequence {
    std::vector<int> values;  // kMasked where unobserved

    int masked_count() const;
    std::vector<int> masked_positions() const;
};

// Exact restriction of q to the sequences agreeing with the observed
// positions, renormalized, returned as a joint over the masked positions (in
// ascending position order). Throws ConditioningError on zero-probability
// evidence.
JointDistribution exact_posterior(const JointDistribution& q, const MaskedSequence& xt);

// KL between the exact posterior and the product of its per-position
// marginals, by full enumeration.
double mean_field_bias(const JointDistribution& q, const MaskedSequence& xt);

// Expected bias per masked-position count m = 0..L: expectation over mask
// placements (uniform) and observed evidence (weighted by its probability).
std::vector<double> bias_curve(const JointDistribution& q);

struct ConfidenceStats {
    double mean = 0.0;
    double variance = 0.0;  // population variance
    int64_t count = 0;
};

struct EosStatsReport {
    int block_size = 0;
    std::optional<ConfidenceStats> eos;  // absent when no eos was committed
    ConfidenceStats content;
};

// Runs multistep decoding over the dataset and partitions commit-time
// confidences by committed-token class (eos vs content).
EosStatsReport eos_confidence_stats(const ModelParams& params,
                                    const std::vector<ReportRecord>& records,
                                    const Vocabulary& vocab, int block_size, double tau,
                                    int max_blocks);

}  // namespace blockdiff
