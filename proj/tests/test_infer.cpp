#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "setfork/corpus.hpp"
#include "setfork/errors.hpp"
#include "setfork/infer.hpp"
#include "setfork/model.hpp"
#include "setfork/vocab.hpp"

using namespace setfork;

namespace {

ModelConfig tiny_config(int vocab_size) {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_ff = 64;
    cfg.context_len = 160;
    cfg.vocab_size = vocab_size;
    cfg.init_scale = 0.08;
    return cfg;
}

Generation gen_with(const std::string& answer) {
    Generation g;
    g.answer = answer;
    return g;
}

// Brute-force oracle: average success over all C(n,k) subsets of n outcomes.
double passk_brute(int n, int c, int k) {
    std::vector<int> outcome(n, 0);
    for (int i = 0; i < c; ++i) outcome[i] = 1;
    std::vector<int> idx(k);
    long long subsets = 0, hits = 0;
    // enumerate k-combinations of {0..n-1}
    for (int i = 0; i < k; ++i) idx[i] = i;
    while (true) {
        ++subsets;
        bool any = false;
        for (int i : idx) any = any || outcome[i] == 1;
        hits += any ? 1 : 0;
        int pos = k - 1;
        while (pos >= 0 && idx[pos] == n - k + pos) --pos;
        if (pos < 0) break;
        ++idx[pos];
        for (int i = pos + 1; i < k; ++i) idx[i] = idx[i - 1] + 1;
    }
    return static_cast<double>(hits) / static_cast<double>(subsets);
}

}  // namespace

TEST_CASE("answer extraction uses the suffix after the last separator") {
    Vocab v(4);
    const auto toks = [&](const std::string& s) { return v.encode(s); };
    CHECK(extract_answer(v, toks("1 6 mod 7 = 2 <ans> 2 <eos>")) == "2");
    CHECK(extract_answer(v, toks("3 <ans> 1 <ans> 1 3 <eos>")) == "13");
    CHECK(extract_answer(v, toks("3 + 5 = 8")) == kNoAnswer);
    CHECK(extract_answer(v, toks("3 <ans> <eos>")) == kNoAnswer);
}

TEST_CASE("majority vote rules") {
    GenerationSet s1{{gen_with("a"), gen_with("a"), gen_with("b")}};
    CHECK(majority_vote(s1) == "a");

    GenerationSet s2{{gen_with("a"), gen_with("b")}};
    CHECK(majority_vote(s2) == "a");  // earliest-index tie break

    GenerationSet s3{{gen_with(kNoAnswer), gen_with(kNoAnswer), gen_with("b")}};
    CHECK(majority_vote(s3) == "b");  // sentinel never beats a real answer

    GenerationSet s4{{gen_with(kNoAnswer), gen_with(kNoAnswer)}};
    CHECK(majority_vote(s4) == kNoAnswer);

    GenerationSet s5{{gen_with("b"), gen_with("a"), gen_with("a")}};
    CHECK(majority_vote(s5) == "a");
}

TEST_CASE("pass@k closed form") {
    CHECK(pass_at_k(5, 5, 3) == 1.0);
    CHECK(pass_at_k(5, 0, 3) == 0.0);
    CHECK(pass_at_k(2, 1, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(pass_at_k(2, 3, 1), ConfigError);
    CHECK_THROWS_AS(pass_at_k(2, 1, 3), ConfigError);
}

TEST_CASE("pass@k estimator equals brute-force subset enumeration for n <= 10") {
    for (int n = 1; n <= 10; ++n) {
        for (int c = 0; c <= n; ++c) {
            for (int k = 1; k <= n; ++k) {
                CHECK(pass_at_k(n, c, k) == doctest::Approx(passk_brute(n, c, k)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("pass@k monotone nondecreasing in k") {
    for (int n : {4, 7, 10}) {
        for (int c = 0; c <= n; ++c) {
            double prev = 0.0;
            for (int k = 1; k <= n; ++k) {
                const double cur = pass_at_k(n, c, k);
                CHECK(cur >= prev - 1e-15);
                prev = cur;
            }
        }
    }
}

TEST_CASE("parallel_generate cycles forking tokens and derives seeds") {
    Vocab v(4);
    Model m(tiny_config(v.size()), 3);
    const auto qa = gen_question(v, TaskFamily::kParity, 7);
    GenConfig gen;
    gen.max_new = 12;
    gen.seed = 42;
    const auto set = parallel_generate(m, v, qa.prompt, 6, 4, gen);
    REQUIRE(set.gens.size() == 6);
    CHECK(set.gens[0].fork_index == 1);
    CHECK(set.gens[3].fork_index == 4);
    CHECK(set.gens[4].fork_index == 1);  // think(i % N) cycling
    CHECK(set.gens[5].fork_index == 2);
    // distinct seeds per generation: token-1 generations may differ
    const auto rerun = parallel_generate(m, v, qa.prompt, 6, 4, gen);
    for (int i = 0; i < 6; ++i) CHECK(rerun.gens[i].tokens == set.gens[i].tokens);  // determinism
}

TEST_CASE("cons@1 equals pass@1 on shared seeds") {
    Vocab v(4);
    Model m(tiny_config(v.size()), 5);
    auto ccfg = CorpusConfig{};
    ccfg.task_family = TaskFamily::kParity;
    ccfg.styles = {{0, "verbose-decompose", 3.5, 1.0}, {1, "compact-direct", 1.0, 1.0}};
    ccfg.questions = 6;
    ccfg.m_min = ccfg.m_max = 2;
    ccfg.n_forking = 4;
    ccfg.seed = 3;
    ccfg.oracle_holdout = 60;
    const auto built = build_corpus(ccfg);

    GenConfig gen;
    gen.max_new = 16;
    // Cons@1 with 1 set / Pass@1 with 1 rep consume identical derived seeds
    // when the generation-seed derivation matches.
    const double consk = eval_consk(m, v, built.records, 1, 1, 4, gen, 123);
    long long correct = 0;
    for (size_t q = 0; q < built.records.size(); ++q) {
        GenConfig g = gen;
        g.seed = derive_seed(123, 0xc05000ULL + q * 1000);
        const auto gens = parallel_generate(m, v, built.records[q].prompt, 1, 4, g);
        correct += gens.gens[0].answer == built.records[q].answer_truth ? 1 : 0;
    }
    CHECK(consk ==
          doctest::Approx(static_cast<double>(correct) / built.records.size()).epsilon(1e-12));
}

TEST_CASE("eval determinism: identical config gives identical report") {
    Vocab v(4);
    Model m(tiny_config(v.size()), 7);
    CorpusConfig ccfg;
    ccfg.task_family = TaskFamily::kParity;
    ccfg.styles = {{0, "verbose-decompose", 3.5, 1.0}, {1, "compact-direct", 1.0, 1.0}};
    ccfg.questions = 4;
    ccfg.m_min = ccfg.m_max = 2;
    ccfg.n_forking = 4;
    ccfg.seed = 9;
    ccfg.oracle_holdout = 60;
    const auto built = build_corpus(ccfg);

    EvalConfig ecfg;
    ecfg.cons_k = 2;
    ecfg.cons_sets = 2;
    ecfg.pass1_reps = 2;
    ecfg.passk_n = 4;
    ecfg.mode_reps = 2;
    ecfg.gen.max_new = 16;
    ecfg.seed = 77;
    const auto r1 = run_eval(m, v, built.records, 4, 1, &built.oracle, ecfg);
    const auto r2 = run_eval(m, v, built.records, 4, 1, &built.oracle, ecfg);
    CHECK(r1.pass1_per_token == r2.pass1_per_token);
    CHECK(r1.cons_k == r2.cons_k);
    CHECK(r1.passk == r2.passk);
    CHECK(r1.modes.collapse_max_tv == r2.modes.collapse_max_tv);

    // all rates live in [0, 1]
    for (double x : r1.pass1_per_token) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
    for (double x : r1.passk) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
    // pass@k curve monotone in k
    for (size_t i = 1; i < r1.passk.size(); ++i) CHECK(r1.passk[i] >= r1.passk[i - 1] - 1e-12);
}

TEST_CASE("mode report produces style distributions per token") {
    Vocab v(4);
    Model m(tiny_config(v.size()), 11);
    CorpusConfig ccfg;
    ccfg.task_family = TaskFamily::kParity;
    ccfg.styles = {{0, "verbose-decompose", 3.5, 1.0}, {1, "compact-direct", 1.0, 1.0}};
    ccfg.questions = 4;
    ccfg.m_min = ccfg.m_max = 2;
    ccfg.n_forking = 4;
    ccfg.seed = 13;
    ccfg.oracle_holdout = 60;
    const auto built = build_corpus(ccfg);
    GenConfig gen;
    gen.max_new = 20;
    const auto rep = mode_report(m, v, built.records, 4, 3, gen, built.oracle, 55);
    REQUIRE(rep.tokens.size() == 4);
    for (const auto& st : rep.tokens) {
        long long total = 0;
        for (const auto& [s, c] : st.style_counts) total += c;
        CHECK(total == 4 * 3);  // questions x reps
        CHECK(st.len_p10 <= st.len_p50);
        CHECK(st.len_p50 <= st.len_p90);
    }
    CHECK(rep.collapse_max_tv >= rep.collapse_mean_tv - 1e-12);
    CHECK(rep.collapse_max_tv <= 1.0 + 1e-12);
    // untrained model: every token samples the same garbage distribution, so
    // the styles cannot separate
    CHECK(rep.collapse_max_tv < 0.5);
}

TEST_CASE("eval report round trips through json") {
    EvalReport rep;
    rep.questions = 3;
    rep.pass1_per_token = {0.25, 0.5};
    rep.pass1_token = 2;
    rep.pass1 = 0.5;
    rep.cons_k = 0.75;
    rep.cons_k_k = 4;
    rep.passk_ks = {1, 2, 4};
    rep.passk = {0.2, 0.4, 0.6};
    TokenModeStats st;
    st.fork_index = 1;
    st.style_counts[0] = 5;
    st.style_counts[-1] = 1;
    st.mean_len = 9.5;
    rep.modes.tokens.push_back(st);
    rep.modes.collapse_mean_tv = 0.1;
    rep.modes.collapse_max_tv = 0.2;

    const std::string path = "/tmp/setfork_eval_rt.json";
    save_eval_report(path, rep);
    const auto loaded = load_eval_report(path);
    CHECK(loaded.pass1_per_token == rep.pass1_per_token);
    CHECK(loaded.cons_k == rep.cons_k);
    CHECK(loaded.passk == rep.passk);
    CHECK(loaded.modes.tokens.at(0).style_counts == rep.modes.tokens.at(0).style_counts);
    std::remove(path.c_str());
}
