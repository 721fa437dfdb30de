#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blockdiff/common.hpp"

namespace blockdiff {

// Token universe. Index 0..2 are reserved for the specials by the builders
// here, but any distinct in-range ids are accepted.
struct Vocabulary {
    std::vector<std::string> symbols;
    int mask_id = 0;
    int eos_id = 1;
    int pad_id = 2;

    int size() const { return static_cast<int>(symbols.size()); }
    int id_of(const std::string& s) const;
    const std::string& symbol(int id) const;
    void validate() const;
};

struct ReportGrammar {
    struct Finding {
        // synonymous surface forms for one finding; all map to the same label
        std::vector<std::vector<std::string>> variants;
    };
    struct Region {
        std::string name;
        std::vector<Finding> findings;
        std::vector<std::string> normal_phrase;
    };
    std::vector<Region> regions;
    std::vector<std::string> catch_all_phrase;
    // optional trailing phrase, present with closing_prob independently of
    // the observation; keeps the ending position uncertain
    std::vector<std::string> closing_phrase;
    double closing_prob = 0.0;
    double abnormal_prob = 0.3;

    int n_regions() const { return static_cast<int>(regions.size()); }
    void validate() const;
};

// label per region: kNormalLabel or the finding index
inline constexpr int kNormalLabel = -1;

struct ReportRecord {
    std::vector<int> context_tokens;
    std::vector<int> response_tokens;  // ends with eos
    std::vector<int> labels;
    bool normalized = true;
};

// 6 regions x 3 findings x 2 surface variants, abnormal_prob 0.3
ReportGrammar default_grammar();

// specials + observation tokens + every phrase word, in grammar order
Vocabulary build_vocabulary(const ReportGrammar& grammar);

std::string observation_token_name(const ReportGrammar& grammar, int region, int label);

ReportRecord generate_sample(const ReportGrammar& grammar, const Vocabulary& vocab,
                             uint64_t seed, bool normalized);

ReportRecord normalize_report(const ReportRecord& record, const ReportGrammar& grammar,
                              const Vocabulary& vocab);

struct ParsedReport {
    struct Assertion {
        int region;
        int finding;  // kNormalLabel for a negative assertion
    };
    std::vector<Assertion> assertions;
    int catch_all_count = 0;
    int closing_count = 0;
    int garbage_tokens = 0;  // tokens not matched by any phrase
    int total_tokens = 0;    // tokens considered (eos excluded)
    bool saw_eos = false;
};

// Greedy longest-match scan of a response against the grammar's phrase
// inventory. Unmatched tokens are skipped and counted as garbage.
ParsedReport parse_response(const std::vector<int>& response, const ReportGrammar& grammar,
                            const Vocabulary& vocab);

void write_dataset(const std::vector<ReportRecord>& records, const std::string& path);
std::vector<ReportRecord> read_dataset(const std::string& path);

void write_grammar(const ReportGrammar& grammar, const std::string& path);
ReportGrammar read_grammar(const std::string& path);

void write_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary read_vocabulary(const std::string& path);

}  // namespace blockdiff
