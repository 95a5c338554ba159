#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "setfork/assignment.hpp"
#include "setfork/batching.hpp"
#include "setfork/corpus.hpp"
#include "setfork/model.hpp"

namespace setfork {

enum class MatchingMode { kOptimal, kRandom, kSftSingle, kSftFlatten };

std::string to_string(MatchingMode m);
MatchingMode matching_mode_from_string(const std::string& s);

struct TrainConfig {
    MatchingMode matching_mode = MatchingMode::kOptimal;
    int n_forking = 4;
    int match_len = 64;  // T_L: trace prefix scored when building cost matrices
    int epochs = 4;
    int global_batch = 32;  // trace sets per optimizer step (plain path)
    int grad_accum = 32;    // micro-chunks per step; sets are processed one at a time
    OptConfig opt;
    uint64_t seed = 0;
    bool normalize_by_m = false;  // divide each example's loss by its M
    bool batched_cost_matrix = true;
    bool use_queue_batching = false;
    int ranks = 1;
    int rank_batch = 0;  // b: sequences per rank per step; 0 derives from global_batch
    double sigma_p_threshold = 0.01;   // tau: final-window mass share for sigma_p
    int sigma_p_window_epochs = 1;
    long long gap_enum_cap = 100000;   // gap metrics skipped when P exceeds this

    void validate(int corpus_max_m) const;
};

// Configs are indexed within the (n_forking, m) space of their example; with
// variable m the key carries both.
struct ConfigKey {
    int m = 0;
    long long k = 0;
    auto operator<=>(const ConfigKey&) const = default;
};

struct StepRecord {
    long step = 0;
    int64_t record_id = 0;
    int m = 0;
    long long k = 0;       // canonical index of the optimal config
    double best = 0.0;     // optimal total matching cost
    double second = 0.0;   // second smallest total (NaN when P > gap cap)
    double mean_others = 0.0;  // mean total over non-optimal configs (NaN likewise)
    double loss = 0.0;     // this example's summed trace NLL
};

struct MatchingStats {
    long long examples = 0;
    long long injectivity_checks = 0;
    long long injectivity_violations = 0;
    std::map<ConfigKey, long long> counts;  // cumulative c(sigma_k)
    std::vector<StepRecord> steps;
    std::vector<std::map<ConfigKey, long long>> epoch_snapshots;  // cumulative, after each epoch
};

void track_matching(MatchingStats& stats, const StepRecord& rec);

struct LearnedMatching {
    int n = 0;
    std::vector<ConfigKey> sigma_p;
    std::map<std::pair<int, int>, long long> edge_weight;  // (token i, trace j) 0-based
    int i_star = 0;  // 1-based forking index
    double tau = 0.0;
    std::map<ConfigKey, long long> window_counts;
};

// Mean NLL (nats/token) of the first min(match_len, T_r) trace tokens under
// (prompt, <think fork_index>). Gradient-isolated: runs the scoring pass only.
double matching_cost(const Model& model, const std::vector<TokenId>& prompt, int fork_index,
                     const std::vector<TokenId>& trace, int match_len);

// Entry (i,j) = matching_cost(g_{i+1}, r_j). batched stacks all N*M rows into
// one forward pass; otherwise each pair runs alone. Both routes agree.
CostMatrix build_cost_matrix(const Model& model, const TraceSet& ts, int n_forking, int match_len,
                             bool batched = true);

struct StepResult {
    double loss = 0.0;
    int sets = 0;
};

// One optimizer step over a minibatch: matching (optimal or random, with the
// optimal configuration always tracked), set loss backprop, AdamW update.
StepResult ssft_step(Model& model, const std::vector<const TraceSet*>& sets,
                     const TrainConfig& cfg, MatchingStats& stats, Rng& match_rng);

// Flattened SFT baselines: every trace conditions on <think 1> (sft_flatten)
// or only the first trace is used (sft_single). No matching records.
StepResult sft_baseline_step(Model& model, const std::vector<const TraceSet*>& sets,
                             const TrainConfig& cfg);

LearnedMatching extract_sigma_p(const MatchingStats& stats, int n_forking, int window_epochs,
                                double tau);

// Eq-style selection: the forking token matched to the largest number of
// distinct traces across sigma_p; ties fall to the largest weighted degree,
// then the lowest index. Returns a 1-based index.
int select_pass1_token(const LearnedMatching& lm);

struct TrainResult {
    MatchingStats stats;
    LearnedMatching learned;
    long steps = 0;
    std::vector<double> step_losses;
    std::vector<EpochReport> epoch_reports;  // queue-batching path only
};

// Full training loop. When out_dir is nonempty, writes stats.jsonl,
// counts.json, learned_matching.json, train_summary.json and checkpoint.bin.
TrainResult train_run(Model& model, const std::vector<TraceSet>& corpus, const TrainConfig& cfg,
                      const std::string& out_dir = "", bool verbose = false);

void save_learned_matching(const std::string& path, const LearnedMatching& lm);
LearnedMatching load_learned_matching(const std::string& path);

}  // namespace setfork
