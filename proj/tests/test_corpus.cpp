#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>
#include <type_traits>

#include "setfork/corpus.hpp"
#include "setfork/errors.hpp"
#include "setfork/vocab.hpp"

using namespace setfork;

namespace {

// Independent oracle: parse the prompt symbols and re-evaluate the closed-form
// rule, without touching the generator's parameter derivation.
std::string reevaluate_prompt(const Vocab& v, TaskFamily family, const std::vector<TokenId>& prompt) {
    std::vector<std::string> sym;
    for (TokenId t : prompt) {
        if (t != Vocab::kBos) sym.push_back(v.symbol(t));
    }
    if (family == TaskFamily::kModularChain) {
        const long long a = std::stoll(sym[3]), b = std::stoll(sym[5]), c = std::stoll(sym[8]),
                        m = std::stoll(sym[11]);
        const long long v1 = sym[4] == "+" ? a + b : a * b;
        const long long v2 = sym[7] == "+" ? v1 + c : v1 * c;
        return std::to_string(v2 % m);
    }
    if (family == TaskFamily::kParity) {
        const long long a = std::stoll(sym[1]), b = std::stoll(sym[3]);
        return (a + b) % 2 == 0 ? "even" : "odd";
    }
    const long long p = std::stoll(sym[2]), q = std::stoll(sym[3]), r = std::stoll(sym[4]);
    return std::to_string(p + q + r);
}

CorpusConfig two_style_config() {
    CorpusConfig cfg;
    cfg.task_family = TaskFamily::kModularChain;
    cfg.styles = {{0, "verbose-decompose", 5.0, 1.0}, {1, "compact-direct", 1.0, 1.0}};
    cfg.questions = 40;
    cfg.m_min = cfg.m_max = 2;
    cfg.n_forking = 4;
    cfg.seed = 11;
    return cfg;
}

// Detector: the training record type must not expose a style field.
template <class T, class = void>
struct has_source_style : std::false_type {};
template <class T>
struct has_source_style<T, std::void_t<decltype(std::declval<T>().source_style)>> : std::true_type {};

}  // namespace

TEST_CASE("vocab layout and round trip") {
    Vocab v(4);
    CHECK(v.think(1) == Vocab::kThinkBase);
    CHECK(v.think(4) == Vocab::kThinkBase + 3);
    CHECK(v.is_think(v.think(2)));
    CHECK(!v.is_think(Vocab::kEos));
    CHECK(v.size() >= 4 + 4 + 10);
    CHECK_THROWS_AS(v.think(5), ConfigError);
    const auto toks = v.encode("Q: 3 + 5 =");
    CHECK(v.decode(toks) == "Q: 3 + 5 =");
    CHECK_THROWS_AS(v.id("bogus"), RunError);
}

TEST_CASE("gen_question pinned examples") {
    Vocab v(4);
    const auto qa0 = gen_question(v, TaskFamily::kModularChain, 0);
    CHECK(v.decode(qa0.prompt) == "<bos> Q: ( ( 3 + 5 ) * 2 ) mod 7 =");
    CHECK(qa0.answer == "2");

    const auto qa1 = gen_question(v, TaskFamily::kParity, 1);
    CHECK(v.decode(qa1.prompt) == "<bos> Q: 7 + 6 =");
    CHECK(qa1.answer == "odd");
}

TEST_CASE("gen_question closed-form oracle over many seeds") {
    Vocab v(4);
    for (TaskFamily family :
         {TaskFamily::kModularChain, TaskFamily::kParity, TaskFamily::kDigitSum}) {
        for (uint64_t seed = 0; seed < 300; ++seed) {
            const auto qa = gen_question(v, family, splitmix64(seed));
            CHECK(reevaluate_prompt(v, family, qa.prompt) == qa.answer);
        }
    }
}

TEST_CASE("gen_trace style templates") {
    Vocab v(4);
    const auto qa = gen_question(v, TaskFamily::kModularChain, 0);
    StyleSpec compact{1, "compact-direct", 1.0, 1.0};
    const auto tr = gen_trace(v, TaskFamily::kModularChain, qa, compact, 5);
    CHECK(v.decode(tr.tokens) == "1 6 mod 7 = 2 <ans> 2 <eos>");
    CHECK(tr.answer_string(v) == "2");

    StyleSpec verbose{0, "verbose-decompose", 5.0, 1.0};
    const auto tv = gen_trace(v, TaskFamily::kModularChain, qa, verbose, 5);
    const std::string body = v.decode(tv.tokens);
    CHECK(body.find("step 3 + 5 = 8 ; step 8 * 2 = 1 6 ; step 1 6 mod 7 = 2") == 0);
    CHECK(tv.answer_string(v) == "2");
    CHECK(tv.length() > tr.length());
}

TEST_CASE("verbosity ratio matches configuration within 10%") {
    Vocab v(4);
    StyleSpec verbose{0, "verbose-decompose", 5.0, 1.0};
    StyleSpec compact{1, "compact-direct", 1.0, 1.0};
    double lv = 0.0, lc = 0.0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        const auto qa = gen_question(v, TaskFamily::kModularChain, splitmix64(1000 + i));
        lv += gen_trace(v, TaskFamily::kModularChain, qa, verbose, 2 * i).body_length();
        lc += gen_trace(v, TaskFamily::kModularChain, qa, compact, 2 * i + 1).body_length();
    }
    const double ratio = lv / lc;
    CHECK(ratio == doctest::Approx(5.0).epsilon(0.10));
}

TEST_CASE("style oracle separates registered styles") {
    Vocab v(4);
    const std::vector<StyleSpec> styles = {{0, "verbose-decompose", 5.0, 1.0},
                                           {1, "compact-direct", 1.0, 1.0},
                                           {2, "redundant-restate", 3.0, 1.0},
                                           {3, "digit-flip", 2.0, 1.0}};
    const auto oracle = StyleOracle::calibrate(v, TaskFamily::kModularChain, styles, 200, 99);
    long long correct = 0, total = 0;
    for (int s = 0; s < 4; ++s) {
        for (int i = 0; i < 1000; ++i) {
            const auto qa = gen_question(v, TaskFamily::kModularChain, splitmix64(50000 + i));
            const auto tr = gen_trace(v, TaskFamily::kModularChain, qa, styles[s],
                                      splitmix64(90000 + s * 1000 + i));
            ++total;
            correct += oracle.classify(v, tr) == s ? 1 : 0;
        }
    }
    CHECK(static_cast<double>(correct) / total >= 0.95);
}

TEST_CASE("style oracle rejects empty trace") {
    Vocab v(4);
    const std::vector<StyleSpec> styles = {{0, "verbose-decompose", 5.0, 1.0},
                                           {1, "compact-direct", 1.0, 1.0}};
    StyleOracle oracle(styles, {30.0, 6.0});
    CHECK_THROWS_AS(oracle.classify(v, std::vector<TokenId>{}), UnclassifiableError);
}

TEST_CASE("build_corpus output and answer verifiability") {
    auto cfg = two_style_config();
    const auto built = build_corpus(cfg);
    Vocab v(cfg.n_forking);
    REQUIRE(built.records.size() == 40);
    REQUIRE(built.sidecar.styles.size() == 40);
    CHECK(built.oracle_accuracy >= cfg.oracle_min_accuracy);
    std::set<int> seen_styles;
    for (size_t r = 0; r < built.records.size(); ++r) {
        const auto& ts = built.records[r];
        CHECK(ts.m() == 2);
        for (int j = 0; j < ts.m(); ++j) {
            // p_correct = 1.0: every answer suffix equals the ground truth.
            CHECK(ts.traces[j].answer_string(v) == ts.answer_truth);
            seen_styles.insert(built.sidecar.styles[r][j]);
        }
        // round_robin with M == #styles: one trace per style, order shuffled
        std::set<int> rec(built.sidecar.styles[r].begin(), built.sidecar.styles[r].end());
        CHECK(rec.size() == 2);
    }
    CHECK(seen_styles == std::set<int>{0, 1});
}

TEST_CASE("imperfect teacher corrupts roughly 1 - p_correct of answers") {
    auto cfg = two_style_config();
    cfg.styles[1].p_correct = 0.8;
    cfg.questions = 400;
    const auto built = build_corpus(cfg);
    Vocab v(cfg.n_forking);
    long long wrong = 0, total = 0;
    for (size_t r = 0; r < built.records.size(); ++r) {
        for (int j = 0; j < built.records[r].m(); ++j) {
            if (built.sidecar.styles[r][j] != 1) continue;
            ++total;
            wrong += built.records[r].traces[j].answer_string(v) != built.records[r].answer_truth;
        }
    }
    const double frac = static_cast<double>(wrong) / total;
    CHECK(frac > 0.10);
    CHECK(frac < 0.30);
}

TEST_CASE("dataset round trip is bit exact") {
    auto cfg = two_style_config();
    cfg.m_min = 2;
    cfg.m_max = 2;
    const auto built = build_corpus(cfg);
    const std::string dir = (std::filesystem::temp_directory_path() / "setfork_corpus_rt").string();
    std::filesystem::create_directories(dir);
    save_dataset(dir + "/dataset.jsonl", built.records);
    const auto loaded = load_dataset(dir + "/dataset.jsonl");
    REQUIRE(loaded.size() == built.records.size());
    for (size_t r = 0; r < loaded.size(); ++r) {
        CHECK(loaded[r].id == built.records[r].id);
        CHECK(loaded[r].prompt == built.records[r].prompt);
        CHECK(loaded[r].answer_truth == built.records[r].answer_truth);
        REQUIRE(loaded[r].m() == built.records[r].m());
        for (int j = 0; j < loaded[r].m(); ++j) {
            CHECK(loaded[r].traces[j].tokens == built.records[r].traces[j].tokens);
        }
    }
    save_sidecar(dir + "/sidecar.jsonl", built.sidecar);
    const auto side = load_sidecar(dir + "/sidecar.jsonl");
    CHECK(side.styles == built.sidecar.styles);
    std::filesystem::remove_all(dir);
}

TEST_CASE("corpus meta round trips the oracle calibration") {
    auto cfg = two_style_config();
    const std::string dir = (std::filesystem::temp_directory_path() / "setfork_corpus_meta").string();
    const auto built = build_corpus(cfg, dir);
    const auto meta = load_corpus_meta(dir + "/corpus_meta.json");
    CHECK(meta.cfg.questions == cfg.questions);
    CHECK(meta.oracle.mean_body_len() == built.oracle.mean_body_len());
    CHECK(meta.oracle_accuracy == built.oracle_accuracy);
    std::filesystem::remove_all(dir);
}

TEST_CASE("variable M corpora draw from the configured range") {
    auto cfg = two_style_config();
    cfg.m_min = 2;
    cfg.m_max = 4;
    cfg.n_forking = 4;
    cfg.questions = 120;
    const auto built = build_corpus(cfg);
    std::set<int> ms;
    for (const auto& ts : built.records) {
        CHECK(ts.m() >= 2);
        CHECK(ts.m() <= 4);
        ms.insert(ts.m());
    }
    CHECK(ms.size() == 3);
}

TEST_CASE("determinism: same config and seed reproduce the corpus") {
    auto cfg = two_style_config();
    const auto a = build_corpus(cfg);
    const auto b = build_corpus(cfg);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t r = 0; r < a.records.size(); ++r) {
        CHECK(a.records[r].prompt == b.records[r].prompt);
        for (int j = 0; j < a.records[r].m(); ++j) {
            CHECK(a.records[r].traces[j].tokens == b.records[r].traces[j].tokens);
        }
    }
}

TEST_CASE("invalid configs are rejected") {
    auto cfg = two_style_config();
    cfg.m_max = 5;  // > n_forking
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = two_style_config();
    cfg.styles.pop_back();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = two_style_config();
    cfg.styles[1].kind = "verbose-decompose";  // duplicate kind
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("training record type carries no style field") {
    static_assert(!has_source_style<TraceRecord>::value);
    static_assert(!has_source_style<TraceSet>::value);
    CHECK(true);
}
