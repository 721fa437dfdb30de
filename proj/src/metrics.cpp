#include "blockdiff/metrics.hpp"

#include <cmath>

#include "blockdiff/kernels.hpp"
#include "blockdiff/layout.hpp"

namespace blockdiff {

double rouge_l(const std::vector<int>& hypothesis, const std::vector<int>& reference) {
    const size_t n = hypothesis.size(), m = reference.size();
    if (n == 0 || m == 0) return 0.0;
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            if (hypothesis[i - 1] == reference[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const int lcs = prev[m];
    if (lcs == 0) return 0.0;
    const double p = static_cast<double>(lcs) / static_cast<double>(n);
    const double r = static_cast<double>(lcs) / static_cast<double>(m);
    return 2.0 * p * r / (p + r);
}

FindingScore finding_f1(const std::vector<int>& response, const std::vector<int>& gold_labels,
                        const ReportGrammar& grammar, const Vocabulary& vocab) {
    const ParsedReport parsed = parse_response(response, grammar, vocab);
    FindingScore s;
    // predicted abnormal assertion set (region, finding), deduplicated
    std::vector<std::pair<int, int>> predicted;
    for (const auto& a : parsed.assertions) {
        if (a.finding == kNormalLabel) continue;
        const auto pr = std::make_pair(a.region, a.finding);
        bool dup = false;
        for (const auto& q : predicted) dup = dup || q == pr;
        if (!dup) predicted.push_back(pr);
    }
    int gold_abnormal = 0;
    for (const auto& pr : predicted) {
        if (gold_labels[static_cast<size_t>(pr.first)] == pr.second)
            ++s.tp;
        else
            ++s.fp;
    }
    for (size_t r = 0; r < gold_labels.size(); ++r) {
        if (gold_labels[r] == kNormalLabel) continue;
        ++gold_abnormal;
        bool hit = false;
        for (const auto& pr : predicted)
            hit = hit || (pr.first == static_cast<int>(r) && pr.second == gold_labels[r]);
        if (!hit) ++s.fn;
    }
    const int n_pred = static_cast<int>(predicted.size());
    s.precision_defined = n_pred > 0;
    if (n_pred == 0 && gold_abnormal == 0) {
        // nothing to find, nothing asserted: exact agreement
        s.precision = s.recall = s.f1 = 1.0;
    } else {
        s.precision = n_pred > 0 ? static_cast<double>(s.tp) / n_pred : 0.0;
        s.recall = gold_abnormal > 0 ? static_cast<double>(s.tp) / gold_abnormal : 1.0;
        s.f1 = (s.precision + s.recall) > 0.0
                   ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                   : 0.0;
    }
    s.false_positive_rate = static_cast<double>(s.fp) / std::max(1, n_pred);
    s.false_negative_rate = static_cast<double>(s.fn) / std::max(1, gold_abnormal);
    s.garbage_fraction = parsed.total_tokens > 0
                             ? static_cast<double>(parsed.garbage_tokens) / parsed.total_tokens
                             : 0.0;
    return s;
}

double teacher_ppl(const ModelParams& ar_params, const std::vector<int>& context,
                   const std::vector<int>& response) {
    if (response.empty()) throw ConfigError("teacher_ppl: empty response");
    const SequenceLayout layout = build_ar_layout(context, response, ar_params.config.max_positions);
    const Tensor logits = forward(ar_params, layout.token_ids, layout.position_ids, layout.attn)
                              .logits;
    const int v = ar_params.config.vocab_size;
    std::vector<double> logp(static_cast<size_t>(v));
    double nll = 0.0;
    int count = 0;
    for (int i = 0; i < layout.len(); ++i) {
        if (!layout.loss_mask[static_cast<size_t>(i)]) continue;
        kernels::log_softmax_row(logits.row_ptr(i), v, logp.data());
        nll -= logp[static_cast<size_t>(layout.loss_targets[static_cast<size_t>(i)])];
        ++count;
    }
    if (count == 0) throw UndefinedMeanError("teacher_ppl: nothing to score");
    return std::exp(nll / static_cast<double>(count));
}

}  // namespace blockdiff
