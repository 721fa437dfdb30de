#include "blockdiff/analysis.hpp"

#include <cmath>

#include "blockdiff/tensor.hpp"

namespace blockdiff {

void JointDistribution::validate() const {
    if (alphabet < 1 || length < 0) throw ConfigError("joint: bad alphabet/length");
    if (n_states() > (1 << 16)) throw ConfigError("joint: V^L exceeds the enumerability bound");
    if (static_cast<int64_t>(probs.size()) != n_states())
        throw DimError("joint: probs size != V^L");
    double sum = 0.0;
    for (double p : probs) {
        if (p < 0.0) throw DomainError("joint: negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw DomainError("joint: probabilities must sum to 1");
}

int64_t JointDistribution::n_states() const {
    int64_t n = 1;
    for (int i = 0; i < length; ++i) n *= alphabet;
    return n;
}

double JointDistribution::prob(const std::vector<int>& seq) const {
    int64_t idx = 0;
    for (int v : seq) {
        if (v < 0 || v >= alphabet) throw RangeError("joint: symbol out of range");
        idx = idx * alphabet + v;
    }
    return probs[static_cast<size_t>(idx)];
}

std::vector<int> JointDistribution::state_to_seq(int64_t state) const {
    std::vector<int> seq(static_cast<size_t>(length));
    for (int i = length - 1; i >= 0; --i) {
        seq[static_cast<size_t>(i)] = static_cast<int>(state % alphabet);
        state /= alphabet;
    }
    return seq;
}

JointDistribution JointDistribution::product(const std::vector<std::vector<double>>& marginals) {
    JointDistribution q;
    q.length = static_cast<int>(marginals.size());
    q.alphabet = marginals.empty() ? 1 : static_cast<int>(marginals[0].size());
    q.probs.assign(static_cast<size_t>(q.n_states()), 0.0);
    for (int64_t s = 0; s < q.n_states(); ++s) {
        const std::vector<int> seq = q.state_to_seq(s);
        double p = 1.0;
        for (int i = 0; i < q.length; ++i)
            p *= marginals[static_cast<size_t>(i)][static_cast<size_t>(seq[static_cast<size_t>(i)])];
        q.probs[static_cast<size_t>(s)] = p;
    }
    q.validate();
    return q;
}

JointDistribution JointDistribution::correlated_copy(int alphabet, int length) {
    JointDistribution q;
    q.alphabet = alphabet;
    q.length = length;
    q.probs.assign(static_cast<size_t>(q.n_states()), 0.0);
    for (int v = 0; v < alphabet; ++v) {
        int64_t idx = 0;
        for (int i = 0; i < length; ++i) idx = idx * alphabet + v;
        q.probs[static_cast<size_t>(idx)] = 1.0 / alphabet;
    }
    q.validate();
    return q;
}

JointDistribution JointDistribution::parity(int length) {
    JointDistribution q;
    q.alphabet = 2;
    q.length = length;
    q.probs.assign(static_cast<size_t>(q.n_states()), 0.0);
    int64_t count = 0;
    for (int64_t s = 0; s < q.n_states(); ++s) {
        const std::vector<int> seq = q.state_to_seq(s);
        int par = 0;
        for (int v : seq) par ^= v;
        if (par == 0) ++count;
    }
    for (int64_t s = 0; s < q.n_states(); ++s) {
        const std::vector<int> seq = q.state_to_seq(s);
        int par = 0;
        for (int v : seq) par ^= v;
        if (par == 0) q.probs[static_cast<size_t>(s)] = 1.0 / static_cast<double>(count);
    }
    q.validate();
    return q;
}

int MaskedSequence::masked_count() const {
    int m = 0;
    for (int v : values) m += v == kMasked ? 1 : 0;
    return m;
}

std::vector<int> MaskedSequence::masked_positions() const {
    std::vector<int> out;
    for (size_t i = 0; i < values.size(); ++i)
        if (values[i] == kMasked) out.push_back(static_cast<int>(i));
    return out;
}

JointDistribution exact_posterior(const JointDistribution& q, const MaskedSequence& xt) {
    q.validate();
    if (static_cast<int>(xt.values.size()) != q.length)
        throw DimError("exact_posterior: sequence length mismatch");
    const std::vector<int> masked = xt.masked_positions();
    JointDistribution post;
    post.alphabet = q.alphabet;
    post.length = static_cast<int>(masked.size());
    post.probs.assign(static_cast<size_t>(post.n_states()), 0.0);
    double evidence = 0.0;
    std::vector<int> seq(static_cast<size_t>(q.length));
    for (int64_t s = 0; s < post.n_states(); ++s) {
        const std::vector<int> fill = post.state_to_seq(s);
        for (int i = 0; i < q.length; ++i) seq[static_cast<size_t>(i)] = xt.values[static_cast<size_t>(i)];
        for (size_t j = 0; j < masked.size(); ++j)
            seq[static_cast<size_t>(masked[j])] = fill[j];
        const double p = q.prob(seq);
        post.probs[static_cast<size_t>(s)] = p;
        evidence += p;
    }
    if (evidence <= 0.0)
        throw ConditioningError("exact_posterior: zero-probability evidence");
    for (double& p : post.probs) p /= evidence;
    return post;
}

double mean_field_bias(const JointDistribution& q, const MaskedSequence& xt) {
    const JointDistribution post = exact_posterior(q, xt);
    if (post.length == 0) return 0.0;
    // per-position marginals of the posterior
    std::vector<std::vector<double>> marg(static_cast<size_t>(post.length),
                                          std::vector<double>(static_cast<size_t>(post.alphabet), 0.0));
    for (int64_t s = 0; s < post.n_states(); ++s) {
        const double p = post.probs[static_cast<size_t>(s)];
        if (p == 0.0) continue;
        const std::vector<int> seq = post.state_to_seq(s);
        for (int i = 0; i < post.length; ++i)
            marg[static_cast<size_t>(i)][static_cast<size_t>(seq[static_cast<size_t>(i)])] += p;
    }
    double kl = 0.0;
    for (int64_t s = 0; s < post.n_states(); ++s) {
        const double p = post.probs[static_cast<size_t>(s)];
        if (p == 0.0) continue;
        const std::vector<int> seq = post.state_to_seq(s);
        double prod = 1.0;
        for (int i = 0; i < post.length; ++i)
            prod *= marg[static_cast<size_t>(i)][static_cast<size_t>(seq[static_cast<size_t>(i)])];
        kl += p * std::log(p / std::max(prod, kEpsKl));
    }
    return std::max(kl, 0.0);
}

namespace {

void enumerate_subsets(int n, int k, std::vector<int>& cur, int start,
                       const std::function<void(const std::vector<int>&)>& fn) {
    if (static_cast<int>(cur.size()) == k) {
        fn(cur);
        return;
    }
    for (int i = start; i < n; ++i) {
        cur.push_back(i);
        enumerate_subsets(n, k, cur, i + 1, fn);
        cur.pop_back();
    }
}

}  // namespace

std::vector<double> bias_curve(const JointDistribution& q) {
    q.validate();
    const int L = q.length;
    std::vector<double> curve(static_cast<size_t>(L + 1), 0.0);
    for (int m = 0; m <= L; ++m) {
        double total = 0.0;
        int64_t n_subsets = 0;
        std::vector<int> cur;
        enumerate_subsets(L, m, cur, 0, [&](const std::vector<int>& subset) {
            ++n_subsets;
            // enumerate observed values on the complement, weighted by evidence
            std::vector<int> observed;
            for (int i = 0; i < L; ++i) {
                bool in = false;
                for (int s : subset)
                    if (s == i) in = true;
                if (!in) observed.push_back(i);
            }
            const int no = static_cast<int>(observed.size());
            int64_t n_assign = 1;
            for (int i = 0; i < no; ++i) n_assign *= q.alphabet;
            for (int64_t a = 0; a < n_assign; ++a) {
                MaskedSequence xt;
                xt.values.assign(static_cast<size_t>(L), kMasked);
                int64_t rest = a;
                for (int i = no - 1; i >= 0; --i) {
                    xt.values[static_cast<size_t>(observed[static_cast<size_t>(i)])] =
                        static_cast<int>(rest % q.alphabet);
                    rest /= q.alphabet;
                }
                // evidence probability = marginal mass consistent with xt
                double evidence = 0.0;
                {
                    JointDistribution tmp;
                    tmp.alphabet = q.alphabet;
                    tmp.length = m;
                    std::vector<int> seq(static_cast<size_t>(L));
                    const std::vector<int> masked = xt.masked_positions();
                    int64_t states = 1;
                    for (int i = 0; i < m; ++i) states *= q.alphabet;
                    tmp.probs.assign(static_cast<size_t>(states), 0.0);
                    for (int64_t s = 0; s < states; ++s) {
                        const std::vector<int> fill = tmp.state_to_seq(s);
                        for (int i = 0; i < L; ++i) seq[static_cast<size_t>(i)] = xt.values[static_cast<size_t>(i)];
                        for (size_t j = 0; j < masked.size(); ++j)
                            seq[static_cast<size_t>(masked[j])] = fill[j];
                        evidence += q.prob(seq);
                    }
                }
                if (evidence <= 0.0) continue;
                total += evidence * mean_field_bias(q, xt);
            }
        });
        curve[static_cast<size_t>(m)] = n_subsets > 0 ? total / static_cast<double>(n_subsets) : 0.0;
    }
    return curve;
}

EosStatsReport eos_confidence_stats(const ModelParams& params,
                                    const std::vector<ReportRecord>& records,
                                    const Vocabulary& vocab, int block_size, double tau,
                                    int max_blocks) {
    DecodeConfig cfg;
    cfg.mode = DecodeMode::Multistep;
    cfg.block_size = block_size;
    cfg.max_blocks = max_blocks;
    cfg.tau = tau;
    cfg.strategy = CacheStrategy::Fused;
    std::vector<double> eos_conf, content_conf;
    for (const ReportRecord& rec : records) {
        const DecodeResult r = decode_multistep(params, rec.context_tokens, cfg, vocab);
        for (const CommitEvent& e : r.trace) {
            if (e.token == vocab.eos_id)
                eos_conf.push_back(e.confidence);
            else
                content_conf.push_back(e.confidence);
        }
    }
    auto stats = [](const std::vector<double>& xs) {
        ConfidenceStats s;
        s.count = static_cast<int64_t>(xs.size());
        if (xs.empty()) return s;
        for (double x : xs) s.mean += x;
        s.mean /= static_cast<double>(xs.size());
        for (double x : xs) s.variance += (x - s.mean) * (x - s.mean);
        s.variance /= static_cast<double>(xs.size());
        return s;
    };
    EosStatsReport rep;
    rep.block_size = block_size;
    rep.content = stats(content_conf);
    if (!eos_conf.empty()) rep.eos = stats(eos_conf);
    return rep;
}

}  // namespace blockdiff
