#pragma once

#include <string>
#include <vector>

#include "blockdiff/corpus.hpp"
#include "blockdiff/model.hpp"

namespace blockdiff {

// LCS-based F measure with beta = 1; 0 when there is no common subsequence.
double rouge_l(const std::vector<int>& hypothesis, const std::vector<int>& reference);

struct FindingScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double false_positive_rate = 0.0;  // FP / max(1, predicted)
    double false_negative_rate = 0.0;  // FN / max(1, gold abnormal)
    int tp = 0;
    int fp = 0;
    int fn = 0;
    bool precision_defined = true;  // false when the response asserts nothing
    double garbage_fraction = 0.0;  // unparseable share of the response
};

// Set-wise comparison of the abnormal assertions detected in the response
// against the gold labels. Unparseable spans are skipped and reported via
// garbage_fraction.
FindingScore finding_f1(const std::vector<int>& response, const std::vector<int>& gold_labels,
                        const ReportGrammar& grammar, const Vocabulary& vocab);

// Perplexity of a response under the AR teacher: exp of the mean next-token
// negative log-likelihood given the context.
double teacher_ppl(const ModelParams& ar_params, const std::vector<int>& context,
                   const std::vector<int>& response);

struct EvalSample {
    double rouge = 0.0;
    FindingScore finding;
    double ppl = 0.0;
    bool terminated = false;
    int64_t decoded_tokens = 0;
    int64_t passes = 0;
    double seconds = 0.0;
};

struct EvalReport {
    double rouge_l = 0.0;
    double finding_precision = 0.0;
    double finding_recall = 0.0;
    double finding_f1 = 0.0;
    double false_positive_rate = 0.0;
    double false_negative_rate = 0.0;
    double garbage_fraction = 0.0;
    double teacher_ppl = 0.0;
    double termination_rate = 0.0;
    double tpf = 0.0;
    double tps = 0.0;
    int64_t samples = 0;
    std::vector<EvalSample> per_sample;
};

}  // namespace blockdiff
