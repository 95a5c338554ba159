#pragma once
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "setfork/corpus.hpp"

namespace setfork {

// One virtual rank's FIFO of whole trace sets plus the parallel size queue.
struct RankQueue {
    int rank = 0;
    std::deque<const TraceSet*> q;
    std::deque<int> sizes;
    long long consumed_sets = 0;
    long long consumed_seqs = 0;

    void enqueue(const TraceSet* ts) {
        q.push_back(ts);
        sizes.push_back(ts->m());
    }
    int queued_seqs() const {
        int n = 0;
        for (int s : sizes) n += s;
        return n;
    }
};

struct RankDraw {
    std::vector<const TraceSet*> sets;
    int drawn_seqs = 0;
    int pads = 0;  // pad sequences appended to reach b_max
};

struct StepPlan {
    std::vector<RankDraw> ranks;
    int b_max = 0;
};

// Simulated collective: every rank observes the identical size table.
std::vector<std::vector<int>> allgather_sizes(const std::vector<RankQueue>& ranks);

// When every rank holds at least b sequences, each rank dequeues whole sets
// until it reaches b, the largest draw defines b_max and the rest pad up to
// it. Returns nullopt when some rank is not ready. Throws ConfigError when a
// queued set has m > b (a set can never be split across steps).
std::optional<StepPlan> plan_step(std::vector<RankQueue>& ranks, int b);

struct EpochReport {
    long long steps = 0;
    long long ragged_steps = 0;  // end-of-epoch flush steps
    std::vector<long long> rank_drawn_seqs;
    std::vector<long long> rank_pads;
    long long sets_consumed = 0;
    long long seqs_consumed = 0;
};

using StepExecutor = std::function<void(const StepPlan&)>;

// Feeds each rank its shard one set at a time (round-robin across ranks, as
// each process iterating its own loader), executing a step whenever every
// rank is ready. Leftovers flush in ragged steps with padding so the ranks
// stay in lockstep.
EpochReport run_epoch(std::vector<RankQueue>& ranks,
                      const std::vector<std::vector<const TraceSet*>>& shards, int b,
                      const StepExecutor& exec);

}  // namespace setfork
