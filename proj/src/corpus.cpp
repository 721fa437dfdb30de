#include "blockdiff/corpus.hpp"

#include <fstream>
#include <set>
#include <unordered_map>

#include <json.hpp>

namespace blockdiff {

using ordered_json = nlohmann::ordered_json;

int Vocabulary::id_of(const std::string& s) const {
    for (int i = 0; i < size(); ++i)
        if (symbols[static_cast<size_t>(i)] == s) return i;
    throw ConfigError("vocabulary: unknown token '" + s + "'");
}

const std::string& Vocabulary::symbol(int id) const {
    if (id < 0 || id >= size()) throw RangeError("vocabulary: id out of range");
    return symbols[static_cast<size_t>(id)];
}

void Vocabulary::validate() const {
    if (size() < 4) throw ConfigError("vocabulary: need at least one content token");
    std::set<std::string> seen(symbols.begin(), symbols.end());
    if (static_cast<int>(seen.size()) != size())
        throw ConfigError("vocabulary: duplicate symbols");
    for (int id : {mask_id, eos_id, pad_id})
        if (id < 0 || id >= size()) throw ConfigError("vocabulary: special id out of range");
    if (mask_id == eos_id || mask_id == pad_id || eos_id == pad_id)
        throw ConfigError("vocabulary: special ids must be distinct");
}

void ReportGrammar::validate() const {
    if (regions.empty()) throw ConfigError("grammar: no regions");
    if (abnormal_prob < 0.0 || abnormal_prob > 1.0)
        throw ConfigError("grammar: abnormal_prob outside [0,1]");
    std::set<std::string> names;
    for (const Region& r : regions) {
        if (!names.insert(r.name).second) throw ConfigError("grammar: duplicate region " + r.name);
        if (r.findings.empty()) throw ConfigError("grammar: region without findings: " + r.name);
        if (r.normal_phrase.empty()) throw ConfigError("grammar: empty normal phrase: " + r.name);
        for (const Finding& f : r.findings) {
            if (f.variants.empty()) throw ConfigError("grammar: finding without variants");
            for (const auto& v : f.variants)
                if (v.empty()) throw ConfigError("grammar: empty finding phrase");
        }
    }
    if (catch_all_phrase.empty()) throw ConfigError("grammar: empty catch-all phrase");
    if (closing_prob < 0.0 || closing_prob > 1.0)
        throw ConfigError("grammar: closing_prob outside [0,1]");
    if (closing_prob > 0.0 && closing_phrase.empty())
        throw ConfigError("grammar: closing_prob set without a closing phrase");
}

ReportGrammar default_grammar() {
    ReportGrammar g;
    g.abnormal_prob = 0.3;
    const std::vector<std::string> names = {"lungs", "heart",  "pleura",
                                            "bones", "hilum", "airways"};
    // Finding surface forms shared across regions; the leading region token
    // makes every phrase unique. Variants of one finding differ in length,
    // so the response's block alignment depends on the phrasing draws.
    const std::vector<std::vector<std::vector<std::string>>> finding_forms = {
        {{"mild", "opacity"}, {"shadowing"}},
        {{"severe", "edema"}, {"marked", "fluid", "overload"}},
        {{"small", "nodule"}, {"lesion"}},
    };
    for (const std::string& name : names) {
        ReportGrammar::Region r;
        r.name = name;
        r.normal_phrase = {name, "is", "clear"};
        for (const auto& forms : finding_forms) {
            ReportGrammar::Finding f;
            for (const auto& form : forms) {
                std::vector<std::string> phrase = {name};
                phrase.insert(phrase.end(), form.begin(), form.end());
                f.variants.push_back(phrase);
            }
            r.findings.push_back(f);
        }
        g.regions.push_back(r);
    }
    g.catch_all_phrase = {"no", "other", "findings"};
    g.closing_phrase = {"further", "review", "advised"};
    g.closing_prob = 0.35;
    return g;
}

std::string observation_token_name(const ReportGrammar& grammar, int region, int label) {
    const std::string& name = grammar.regions[static_cast<size_t>(region)].name;
    if (label == kNormalLabel) return "obs:" + name + ":norm";
    return "obs:" + name + ":f" + std::to_string(label);
}

Vocabulary build_vocabulary(const ReportGrammar& grammar) {
    grammar.validate();
    Vocabulary v;
    v.symbols = {"<mask>", "<eos>", "<pad>"};
    v.mask_id = 0;
    v.eos_id = 1;
    v.pad_id = 2;
    std::set<std::string> seen(v.symbols.begin(), v.symbols.end());
    auto put = [&](const std::string& s) {
        if (seen.insert(s).second) v.symbols.push_back(s);
    };
    for (int r = 0; r < grammar.n_regions(); ++r) {
        put(observation_token_name(grammar, r, kNormalLabel));
        const auto& region = grammar.regions[static_cast<size_t>(r)];
        for (size_t f = 0; f < region.findings.size(); ++f)
            put(observation_token_name(grammar, r, static_cast<int>(f)));
    }
    for (const auto& region : grammar.regions) {
        for (const std::string& w : region.normal_phrase) put(w);
        for (const auto& finding : region.findings)
            for (const auto& variant : finding.variants)
                for (const std::string& w : variant) put(w);
    }
    for (const std::string& w : grammar.catch_all_phrase) put(w);
    for (const std::string& w : grammar.closing_phrase) put(w);
    v.validate();
    return v;
}

namespace {

std::vector<int> tokenize(const std::vector<std::string>& words, const Vocabulary& vocab) {
    std::vector<int> out;
    out.reserve(words.size());
    for (const std::string& w : words) out.push_back(vocab.id_of(w));
    return out;
}

// per-region draws derived from the record seed so that the label and the
// surface variant do not depend on iteration order or on the normalized flag
int draw_label(const ReportGrammar& g, uint64_t record_seed, int region) {
    Rng rng(derive_seed(record_seed, static_cast<uint64_t>(2 * region)));
    if (!rng.next_bernoulli(g.abnormal_prob)) return kNormalLabel;
    const auto& findings = g.regions[static_cast<size_t>(region)].findings;
    return static_cast<int>(rng.next_below(findings.size()));
}

int draw_variant(const ReportGrammar& g, uint64_t record_seed, int region, int finding) {
    Rng rng(derive_seed(record_seed, static_cast<uint64_t>(2 * region + 1)));
    const auto& f = g.regions[static_cast<size_t>(region)].findings[static_cast<size_t>(finding)];
    return static_cast<int>(rng.next_below(f.variants.size()));
}

bool draw_closing(const ReportGrammar& g, uint64_t record_seed) {
    if (g.closing_prob <= 0.0) return false;
    Rng rng(derive_seed(record_seed, static_cast<uint64_t>(2 * g.n_regions())));
    return rng.next_bernoulli(g.closing_prob);
}

std::vector<int> render_response(const ReportGrammar& g, const Vocabulary& vocab,
                                 const std::vector<int>& labels,
                                 const std::vector<std::vector<int>>& abnormal_phrases,
                                 bool normalized, bool closing) {
    std::vector<int> out;
    int n_normal = 0;
    for (int r = 0; r < g.n_regions(); ++r) {
        const int label = labels[static_cast<size_t>(r)];
        if (label == kNormalLabel) {
            ++n_normal;
            if (normalized) {
                const auto phrase =
                    tokenize(g.regions[static_cast<size_t>(r)].normal_phrase, vocab);
                out.insert(out.end(), phrase.begin(), phrase.end());
            }
        } else {
            const auto& phrase = abnormal_phrases[static_cast<size_t>(r)];
            out.insert(out.end(), phrase.begin(), phrase.end());
        }
    }
    if (!normalized && n_normal > 0) {
        const auto phrase = tokenize(g.catch_all_phrase, vocab);
        out.insert(out.end(), phrase.begin(), phrase.end());
    }
    if (closing) {
        const auto phrase = tokenize(g.closing_phrase, vocab);
        out.insert(out.end(), phrase.begin(), phrase.end());
    }
    out.push_back(vocab.eos_id);
    return out;
}

}  // namespace

ReportRecord generate_sample(const ReportGrammar& grammar, const Vocabulary& vocab,
                             uint64_t seed, bool normalized) {
    grammar.validate();
    ReportRecord rec;
    rec.normalized = normalized;
    std::vector<std::vector<int>> abnormal_phrases(static_cast<size_t>(grammar.n_regions()));
    for (int r = 0; r < grammar.n_regions(); ++r) {
        const int label = draw_label(grammar, seed, r);
        rec.labels.push_back(label);
        rec.context_tokens.push_back(vocab.id_of(observation_token_name(grammar, r, label)));
        if (label != kNormalLabel) {
            const int variant = draw_variant(grammar, seed, r, label);
            abnormal_phrases[static_cast<size_t>(r)] = tokenize(
                grammar.regions[static_cast<size_t>(r)]
                    .findings[static_cast<size_t>(label)]
                    .variants[static_cast<size_t>(variant)],
                vocab);
        }
    }
    rec.response_tokens = render_response(grammar, vocab, rec.labels, abnormal_phrases, normalized,
                                          draw_closing(grammar, seed));
    return rec;
}

ReportRecord normalize_report(const ReportRecord& record, const ReportGrammar& grammar,
                              const Vocabulary& vocab) {
    if (record.labels.size() != static_cast<size_t>(grammar.n_regions()))
        throw ConfigError("normalize_report: record labels missing or wrong arity");
    if (record.normalized) return record;
    // keep each written finding's surface form, insert explicit negatives,
    // drop the catch-all
    const ParsedReport parsed = parse_response(record.response_tokens, grammar, vocab);
    std::vector<std::vector<int>> abnormal_phrases(static_cast<size_t>(grammar.n_regions()));
    for (const auto& a : parsed.assertions) {
        if (a.finding == kNormalLabel) continue;
        // recover the exact span as written: re-render variants and match
        const auto& f =
            grammar.regions[static_cast<size_t>(a.region)].findings[static_cast<size_t>(a.finding)];
        for (const auto& variant : f.variants) {
            const std::vector<int> phrase = tokenize(variant, vocab);
            for (size_t i = 0; i + phrase.size() <= record.response_tokens.size(); ++i) {
                if (std::equal(phrase.begin(), phrase.end(), record.response_tokens.begin() + static_cast<long>(i))) {
                    abnormal_phrases[static_cast<size_t>(a.region)] = phrase;
                    break;
                }
            }
            if (!abnormal_phrases[static_cast<size_t>(a.region)].empty()) break;
        }
    }
    // canonical first variant for any labelled finding the response did not spell out
    for (int r = 0; r < grammar.n_regions(); ++r) {
        const int label = record.labels[static_cast<size_t>(r)];
        if (label == kNormalLabel || !abnormal_phrases[static_cast<size_t>(r)].empty()) continue;
        abnormal_phrases[static_cast<size_t>(r)] = tokenize(
            grammar.regions[static_cast<size_t>(r)].findings[static_cast<size_t>(label)].variants[0],
            vocab);
    }
    ReportRecord out;
    out.context_tokens = record.context_tokens;
    out.labels = record.labels;
    out.normalized = true;
    out.response_tokens = render_response(grammar, vocab, out.labels, abnormal_phrases,
                                          /*normalized=*/true, parsed.closing_count > 0);
    return out;
}

ParsedReport parse_response(const std::vector<int>& response, const ReportGrammar& grammar,
                            const Vocabulary& vocab) {
    // phrase inventory: (tokens, region, finding); catch-all gets region -1
    struct Entry {
        std::vector<int> tokens;
        int region;
        int finding;
    };
    std::vector<Entry> inventory;
    for (int r = 0; r < grammar.n_regions(); ++r) {
        const auto& region = grammar.regions[static_cast<size_t>(r)];
        inventory.push_back({tokenize(region.normal_phrase, vocab), r, kNormalLabel});
        for (size_t f = 0; f < region.findings.size(); ++f)
            for (const auto& variant : region.findings[f].variants)
                inventory.push_back({tokenize(variant, vocab), r, static_cast<int>(f)});
    }
    const std::vector<int> catch_all = tokenize(grammar.catch_all_phrase, vocab);
    const std::vector<int> closing =
        grammar.closing_phrase.empty() ? std::vector<int>{}
                                       : tokenize(grammar.closing_phrase, vocab);

    ParsedReport out;
    size_t i = 0;
    while (i < response.size()) {
        if (response[i] == vocab.eos_id) {
            out.saw_eos = true;
            break;
        }
        ++out.total_tokens;
        const Entry* best = nullptr;
        size_t best_len = 0;
        auto match_at = [&](const std::vector<int>& phrase) {
            if (i + phrase.size() > response.size()) return false;
            return std::equal(phrase.begin(), phrase.end(), response.begin() + static_cast<long>(i));
        };
        for (const Entry& e : inventory) {
            if (e.tokens.size() > best_len && match_at(e.tokens)) {
                best = &e;
                best_len = e.tokens.size();
            }
        }
        bool is_catch_all = false, is_closing = false;
        if (catch_all.size() > best_len && match_at(catch_all)) {
            is_catch_all = true;
            best_len = catch_all.size();
        }
        if (!closing.empty() && closing.size() > best_len && match_at(closing)) {
            is_catch_all = false;
            is_closing = true;
            best_len = closing.size();
        }
        if (is_closing) {
            ++out.closing_count;
            out.total_tokens += static_cast<int>(best_len) - 1;
            i += best_len;
        } else if (is_catch_all) {
            ++out.catch_all_count;
            out.total_tokens += static_cast<int>(best_len) - 1;
            i += best_len;
        } else if (best) {
            out.assertions.push_back({best->region, best->finding});
            out.total_tokens += static_cast<int>(best_len) - 1;
            i += best_len;
        } else {
            ++out.garbage_tokens;
            ++i;
        }
    }
    return out;
}

namespace {

ordered_json record_to_json(const ReportRecord& r) {
    ordered_json j;
    j["context"] = r.context_tokens;
    j["response"] = r.response_tokens;
    j["labels"] = r.labels;
    j["normalized"] = r.normalized;
    return j;
}

ReportRecord record_from_json(const ordered_json& j) {
    ReportRecord r;
    r.context_tokens = j.at("context").get<std::vector<int>>();
    r.response_tokens = j.at("response").get<std::vector<int>>();
    r.labels = j.at("labels").get<std::vector<int>>();
    r.normalized = j.at("normalized").get<bool>();
    return r;
}

}  // namespace

void write_dataset(const std::vector<ReportRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("write_dataset: cannot open " + path);
    for (const ReportRecord& r : records) out << record_to_json(r).dump() << "\n";
}

std::vector<ReportRecord> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("read_dataset: cannot open " + path);
    std::vector<ReportRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(ordered_json::parse(line)));
        } catch (const std::exception& e) {
            throw ParseError("read_dataset: parse error at line " + std::to_string(lineno) +
                             ": " + e.what());
        }
    }
    return out;
}

void write_grammar(const ReportGrammar& grammar, const std::string& path) {
    ordered_json j;
    j["abnormal_prob"] = grammar.abnormal_prob;
    j["catch_all_phrase"] = grammar.catch_all_phrase;
    j["closing_phrase"] = grammar.closing_phrase;
    j["closing_prob"] = grammar.closing_prob;
    j["regions"] = ordered_json::array();
    for (const auto& r : grammar.regions) {
        ordered_json jr;
        jr["name"] = r.name;
        jr["normal_phrase"] = r.normal_phrase;
        jr["findings"] = ordered_json::array();
        for (const auto& f : r.findings) jr["findings"].push_back(f.variants);
        j["regions"].push_back(jr);
    }
    std::ofstream out(path);
    if (!out) throw Error("write_grammar: cannot open " + path);
    out << j.dump(2) << "\n";
}

ReportGrammar read_grammar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("read_grammar: cannot open " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("read_grammar: ") + e.what());
    }
    ReportGrammar g;
    g.abnormal_prob = j.at("abnormal_prob").get<double>();
    g.catch_all_phrase = j.at("catch_all_phrase").get<std::vector<std::string>>();
    g.closing_phrase = j.at("closing_phrase").get<std::vector<std::string>>();
    g.closing_prob = j.at("closing_prob").get<double>();
    for (const auto& jr : j.at("regions")) {
        ReportGrammar::Region r;
        r.name = jr.at("name").get<std::string>();
        r.normal_phrase = jr.at("normal_phrase").get<std::vector<std::string>>();
        for (const auto& jf : jr.at("findings")) {
            ReportGrammar::Finding f;
            f.variants = jf.get<std::vector<std::vector<std::string>>>();
            r.findings.push_back(f);
        }
        g.regions.push_back(r);
    }
    g.validate();
    return g;
}

void write_vocabulary(const Vocabulary& vocab, const std::string& path) {
    ordered_json j;
    j["symbols"] = vocab.symbols;
    j["mask_id"] = vocab.mask_id;
    j["eos_id"] = vocab.eos_id;
    j["pad_id"] = vocab.pad_id;
    std::ofstream out(path);
    if (!out) throw Error("write_vocabulary: cannot open " + path);
    out << j.dump(2) << "\n";
}

Vocabulary read_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("read_vocabulary: cannot open " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(std::string("read_vocabulary: ") + e.what());
    }
    Vocabulary v;
    v.symbols = j.at("symbols").get<std::vector<std::string>>();
    v.mask_id = j.at("mask_id").get<int>();
    v.eos_id = j.at("eos_id").get<int>();
    v.pad_id = j.at("pad_id").get<int>();
    v.validate();
    return v;
}

}  // namespace blockdiff
