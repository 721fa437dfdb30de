#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "blockdiff/corpus.hpp"

using namespace blockdiff;

namespace {
ReportGrammar tiny_grammar(int n_regions, double abnormal_prob) {
    ReportGrammar g = default_grammar();
    g.regions.resize(static_cast<size_t>(n_regions));
    g.abnormal_prob = abnormal_prob;
    g.closing_prob = 0.0;  // no randomness beyond the labels
    return g;
}
}  // namespace

TEST_CASE("vocabulary invariants") {
    const Vocabulary v = build_vocabulary(default_grammar());
    v.validate();
    CHECK(v.size() >= 4);
    CHECK(v.mask_id != v.eos_id);
    CHECK_THROWS_AS(v.id_of("not-a-token"), ConfigError);
    Vocabulary bad = v;
    bad.symbols.push_back(bad.symbols[5]);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("abnormal_prob 0, normalized: response is the normal phrases plus eos") {
    const ReportGrammar g = tiny_grammar(1, 0.0);
    const Vocabulary v = build_vocabulary(g);
    const ReportRecord r = generate_sample(g, v, 123, true);
    std::vector<int> expect;
    for (const std::string& w : g.regions[0].normal_phrase) expect.push_back(v.id_of(w));
    expect.push_back(v.eos_id);
    CHECK(r.response_tokens == expect);
    CHECK(r.labels == std::vector<int>{kNormalLabel});
}

TEST_CASE("abnormal_prob 0, unnormalized: response is catch-all plus eos") {
    const ReportGrammar g = tiny_grammar(3, 0.0);
    const Vocabulary v = build_vocabulary(g);
    const ReportRecord r = generate_sample(g, v, 9, false);
    std::vector<int> expect;
    for (const std::string& w : g.catch_all_phrase) expect.push_back(v.id_of(w));
    expect.push_back(v.eos_id);
    CHECK(r.response_tokens == expect);
}

TEST_CASE("generation is deterministic and labels reparse exactly") {
    const ReportGrammar g = default_grammar();
    const Vocabulary v = build_vocabulary(g);
    for (uint64_t seed : {1ull, 42ull, 999ull, 31337ull}) {
        const ReportRecord a = generate_sample(g, v, seed, true);
        const ReportRecord b = generate_sample(g, v, seed, true);
        CHECK(a.response_tokens == b.response_tokens);
        CHECK(a.context_tokens == b.context_tokens);
        // exactly one assertion per region, in order, labels matching
        const ParsedReport parsed = parse_response(a.response_tokens, g, v);
        REQUIRE(parsed.assertions.size() == static_cast<size_t>(g.n_regions()));
        CHECK(parsed.garbage_tokens == 0);
        CHECK(parsed.saw_eos);
        for (int r = 0; r < g.n_regions(); ++r) {
            CHECK(parsed.assertions[static_cast<size_t>(r)].region == r);
            CHECK(parsed.assertions[static_cast<size_t>(r)].finding ==
                  a.labels[static_cast<size_t>(r)]);
        }
    }
}

TEST_CASE("normalize_report is idempotent and matches direct generation") {
    const ReportGrammar g = default_grammar();
    const Vocabulary v = build_vocabulary(g);
    for (uint64_t seed = 0; seed < 50; ++seed) {
        const ReportRecord un = generate_sample(g, v, seed, false);
        const ReportRecord norm = normalize_report(un, g, v);
        CHECK(norm.normalized);
        CHECK(norm.labels == un.labels);
        const ReportRecord direct = generate_sample(g, v, seed, true);
        CHECK(norm.response_tokens == direct.response_tokens);
        const ReportRecord again = normalize_report(norm, g, v);
        CHECK(again.response_tokens == norm.response_tokens);
    }
}

TEST_CASE("normalized and unnormalized carry the same abnormal findings") {
    const ReportGrammar g = default_grammar();
    const Vocabulary v = build_vocabulary(g);
    for (uint64_t seed = 100; seed < 150; ++seed) {
        const ReportRecord a = generate_sample(g, v, seed, true);
        const ReportRecord b = generate_sample(g, v, seed, false);
        CHECK(a.labels == b.labels);
        auto abnormal = [&](const ReportRecord& r) {
            std::vector<std::pair<int, int>> out;
            for (const auto& x : parse_response(r.response_tokens, g, v).assertions)
                if (x.finding != kNormalLabel) out.push_back({x.region, x.finding});
            return out;
        };
        CHECK(abnormal(a) == abnormal(b));
    }
}

TEST_CASE("all regions abnormal: unnormalized has no catch-all") {
    const ReportGrammar g = tiny_grammar(3, 1.0);
    const Vocabulary v = build_vocabulary(g);
    const ReportRecord r = generate_sample(g, v, 5, false);
    const ParsedReport parsed = parse_response(r.response_tokens, g, v);
    CHECK(parsed.catch_all_count == 0);
    CHECK(parsed.assertions.size() == 3);
    const ReportRecord n = generate_sample(g, v, 5, true);
    CHECK(n.response_tokens == r.response_tokens);  // identical when nothing is omitted
}

TEST_CASE("dataset round trip") {
    const ReportGrammar g = default_grammar();
    const Vocabulary v = build_vocabulary(g);
    std::vector<ReportRecord> records;
    for (uint64_t seed = 0; seed < 100; ++seed)
        records.push_back(generate_sample(g, v, seed, seed % 2 == 0));
    const std::string path = (std::filesystem::temp_directory_path() / "bd_corpus_rt.jsonl").string();
    write_dataset(records, path);
    const std::vector<ReportRecord> back = read_dataset(path);
    REQUIRE(back.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].context_tokens == records[i].context_tokens);
        CHECK(back[i].response_tokens == records[i].response_tokens);
        CHECK(back[i].labels == records[i].labels);
        CHECK(back[i].normalized == records[i].normalized);
    }
    std::filesystem::remove(path);
}

TEST_CASE("empty dataset round trip") {
    const std::string path = (std::filesystem::temp_directory_path() / "bd_corpus_empty.jsonl").string();
    write_dataset({}, path);
    CHECK(read_dataset(path).empty());
    std::filesystem::remove(path);
}

TEST_CASE("truncated final line reports its line number") {
    const std::string path = (std::filesystem::temp_directory_path() / "bd_corpus_bad.jsonl").string();
    {
        std::ofstream out(path);
        out << R"({"context":[1],"response":[2],"labels":[-1],"normalized":true})" << "\n";
        out << R"({"context":[1],"resp)";
    }
    try {
        read_dataset(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("phrase token missing from vocabulary is a configuration error") {
    const ReportGrammar g = default_grammar();
    Vocabulary v = build_vocabulary(g);
    v.symbols.pop_back();  // drop a content token
    CHECK_THROWS_AS(
        [&] {
            for (uint64_t seed = 0; seed < 64; ++seed) generate_sample(g, v, seed, false);
        }(),
        ConfigError);
}

TEST_CASE("grammar and vocabulary files round trip") {
    const ReportGrammar g = default_grammar();
    const Vocabulary v = build_vocabulary(g);
    const auto dir = std::filesystem::temp_directory_path();
    const std::string gp = (dir / "bd_grammar.json").string();
    const std::string vp = (dir / "bd_vocab.json").string();
    write_grammar(g, gp);
    write_vocabulary(v, vp);
    const ReportGrammar g2 = read_grammar(gp);
    const Vocabulary v2 = read_vocabulary(vp);
    CHECK(g2.n_regions() == g.n_regions());
    CHECK(g2.catch_all_phrase == g.catch_all_phrase);
    CHECK(v2.symbols == v.symbols);
    for (uint64_t seed = 0; seed < 10; ++seed)
        CHECK(generate_sample(g2, v2, seed, true).response_tokens ==
              generate_sample(g, v, seed, true).response_tokens);
    std::filesystem::remove(gp);
    std::filesystem::remove(vp);
}
