#include "setfork/batching.hpp"

#include <algorithm>
#include <string>

#include "setfork/errors.hpp"

namespace setfork {

std::vector<std::vector<int>> allgather_sizes(const std::vector<RankQueue>& ranks) {
    std::vector<std::vector<int>> table;
    table.reserve(ranks.size());
    for (const auto& r : ranks) table.emplace_back(r.sizes.begin(), r.sizes.end());
    return table;
}

namespace {

RankDraw draw_until(RankQueue& rank, int b) {
    RankDraw d;
    while (d.drawn_seqs < b && !rank.q.empty()) {
        const TraceSet* ts = rank.q.front();
        rank.q.pop_front();
        rank.sizes.pop_front();
        d.sets.push_back(ts);
        d.drawn_seqs += ts->m();
        ++rank.consumed_sets;
        rank.consumed_seqs += ts->m();
    }
    return d;
}

void finish_plan(StepPlan& plan) {
    plan.b_max = 0;
    for (const auto& d : plan.ranks) plan.b_max = std::max(plan.b_max, d.drawn_seqs);
    for (auto& d : plan.ranks) d.pads = plan.b_max - d.drawn_seqs;
}

}  // namespace

std::optional<StepPlan> plan_step(std::vector<RankQueue>& ranks, int b) {
    if (b < 1) throw ConfigError("batching: b must be >= 1");
    const auto table = allgather_sizes(ranks);
    for (const auto& sizes : table) {
        for (int m : sizes) {
            if (m > b) {
                throw ConfigError("batching: set with M=" + std::to_string(m) +
                                  " cannot fit per-rank batch b=" + std::to_string(b));
            }
        }
    }
    for (const auto& sizes : table) {
        int total = 0;
        for (int m : sizes) total += m;
        if (total < b) return std::nullopt;
    }
    StepPlan plan;
    plan.ranks.resize(ranks.size());
    for (size_t r = 0; r < ranks.size(); ++r) plan.ranks[r] = draw_until(ranks[r], b);
    finish_plan(plan);
    return plan;
}

EpochReport run_epoch(std::vector<RankQueue>& ranks,
                      const std::vector<std::vector<const TraceSet*>>& shards, int b,
                      const StepExecutor& exec) {
    if (shards.size() != ranks.size()) throw ConfigError("batching: one shard per rank required");
    EpochReport rep;
    rep.rank_drawn_seqs.assign(ranks.size(), 0);
    rep.rank_pads.assign(ranks.size(), 0);

    auto account = [&](const StepPlan& plan) {
        for (size_t r = 0; r < plan.ranks.size(); ++r) {
            rep.rank_drawn_seqs[r] += plan.ranks[r].drawn_seqs;
            rep.rank_pads[r] += plan.ranks[r].pads;
            rep.sets_consumed += static_cast<long long>(plan.ranks[r].sets.size());
            rep.seqs_consumed += plan.ranks[r].drawn_seqs;
        }
        ++rep.steps;
        exec(plan);
    };

    size_t max_len = 0;
    for (const auto& s : shards) max_len = std::max(max_len, s.size());
    for (size_t idx = 0; idx < max_len; ++idx) {
        for (size_t r = 0; r < ranks.size(); ++r) {
            if (idx < shards[r].size()) ranks[r].enqueue(shards[r][idx]);
        }
        while (auto plan = plan_step(ranks, b)) account(*plan);
    }

    // End-of-epoch flush: some rank never reaches b. All ranks still step
    // together (possibly drawing nothing and padding fully) so the simulated
    // collective cannot deadlock.
    auto any_left = [&]() {
        for (const auto& r : ranks) {
            if (!r.q.empty()) return true;
        }
        return false;
    };
    while (any_left()) {
        StepPlan plan;
        plan.ranks.resize(ranks.size());
        for (size_t r = 0; r < ranks.size(); ++r) plan.ranks[r] = draw_until(ranks[r], b);
        finish_plan(plan);
        ++rep.ragged_steps;
        account(plan);
    }
    return rep;
}

}  // namespace setfork
