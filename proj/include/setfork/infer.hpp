#pragma once
#include <map>
#include <string>
#include <vector>

#include "setfork/corpus.hpp"
#include "setfork/model.hpp"

namespace setfork {

// Extracted-answer sentinel for generations without an <ans> separator.
inline const std::string kNoAnswer = "<no-answer>";

struct Generation {
    int fork_index = 0;  // 1-based forking token used
    std::vector<TokenId> tokens;
    std::string answer;  // kNoAnswer when missing
    int think_len = 0;   // tokens before <ans> (whole output when missing)
};

struct GenerationSet {
    std::vector<Generation> gens;
};

// Concatenated answer symbols after the last <ans>; sentinel when absent.
std::string extract_answer(const Vocab& vocab, const std::vector<TokenId>& tokens);

// Generation i (0-based) uses forking token 1 + (i % n_forking) and a seed
// derived from gen.seed and i.
GenerationSet parallel_generate(const Model& model, const Vocab& vocab,
                                const std::vector<TokenId>& prompt, int k, int n_forking,
                                const GenConfig& gen);

// Most frequent real answer; ties break to the earliest generation holding a
// tied answer. The no-answer sentinel wins only when nothing else exists.
std::string majority_vote(const GenerationSet& gens);

// Unbiased coverage estimator 1 - C(n-c,k)/C(n,k).
double pass_at_k(int n, int c, int k);

struct EvalConfig {
    int cons_k = 4;        // parallel generations per vote
    int cons_sets = 5;     // repetition sets (variance reduction)
    int pass1_reps = 8;    // single generations per question per token
    int passk_n = 8;       // generations per question for the coverage curve
    int mode_reps = 6;     // generations per question per token for mode stats
    GenConfig gen;
    uint64_t seed = 0;
};

struct TokenModeStats {
    int fork_index = 0;
    std::map<int, long long> style_counts;  // style_id -> count
    long long unclassifiable = 0;
    double mean_len = 0.0;
    double len_p10 = 0.0, len_p50 = 0.0, len_p90 = 0.0;
    double accuracy = 0.0;
};

struct ModeReport {
    std::vector<TokenModeStats> tokens;
    double collapse_mean_tv = 0.0;  // mean pairwise total variation
    double collapse_max_tv = 0.0;   // max pairwise total variation
};

struct EvalReport {
    std::vector<double> pass1_per_token;  // index i-1 = forking token i
    int pass1_token = 0;                  // token used for the headline pass@1
    double pass1 = 0.0;
    double cons_k = 0.0;
    int cons_k_k = 0;
    std::vector<int> passk_ks;
    std::vector<double> passk;
    ModeReport modes;
    int questions = 0;
};

double eval_pass1(const Model& model, const Vocab& vocab, const std::vector<TraceSet>& eval_set,
                  int fork_index, int reps, const GenConfig& gen, uint64_t seed);

double eval_consk(const Model& model, const Vocab& vocab, const std::vector<TraceSet>& eval_set,
                  int k, int sets, int n_forking, const GenConfig& gen, uint64_t seed);

std::vector<double> eval_passk_curve(const Model& model, const Vocab& vocab,
                                     const std::vector<TraceSet>& eval_set, int n_gens,
                                     const std::vector<int>& ks, int n_forking,
                                     const GenConfig& gen, uint64_t seed);

ModeReport mode_report(const Model& model, const Vocab& vocab,
                       const std::vector<TraceSet>& eval_set, int n_forking, int reps,
                       const GenConfig& gen, const StyleOracle& oracle, uint64_t seed);

EvalReport run_eval(const Model& model, const Vocab& vocab, const std::vector<TraceSet>& eval_set,
                    int n_forking, int pass1_token, const StyleOracle* oracle,
                    const EvalConfig& cfg);

void save_eval_report(const std::string& path, const EvalReport& rep);
EvalReport load_eval_report(const std::string& path);

}  // namespace setfork
