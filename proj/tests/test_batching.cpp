#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <set>

#include "setfork/batching.hpp"
#include "setfork/errors.hpp"
#include "setfork/rng.hpp"

using namespace setfork;

namespace {

// Bare trace sets; tests here only need sizes and identities.
std::vector<TraceSet> make_sets(const std::vector<int>& ms) {
    std::vector<TraceSet> out(ms.size());
    for (size_t i = 0; i < ms.size(); ++i) {
        out[i].id = static_cast<int64_t>(i);
        out[i].prompt = {1};
        out[i].traces.resize(ms[i]);
        for (auto& tr : out[i].traces) tr.tokens = {5, 3, 6};
    }
    return out;
}

std::vector<RankQueue> make_ranks(int r) {
    std::vector<RankQueue> ranks(r);
    for (int i = 0; i < r; ++i) ranks[i].rank = i;
    return ranks;
}

}  // namespace

TEST_CASE("allgather exposes identical size tables") {
    auto sets = make_sets({4, 2, 3});
    auto ranks = make_ranks(2);
    ranks[0].enqueue(&sets[0]);
    ranks[1].enqueue(&sets[1]);
    ranks[1].enqueue(&sets[2]);
    const auto table = allgather_sizes(ranks);
    REQUIRE(table.size() == 2);
    CHECK(table[0] == std::vector<int>{4});
    CHECK(table[1] == std::vector<int>{2, 3});
}

TEST_CASE("plan_step exact fit: no pads") {
    auto sets = make_sets({4, 2, 2, 2, 2});
    auto ranks = make_ranks(2);
    ranks[0].enqueue(&sets[0]);
    for (int i = 1; i <= 4; ++i) ranks[1].enqueue(&sets[i]);
    const auto plan = plan_step(ranks, 4);
    REQUIRE(plan.has_value());
    CHECK(plan->ranks[0].drawn_seqs == 4);  // one set of 4
    CHECK(plan->ranks[0].sets.size() == 1);
    CHECK(plan->ranks[1].drawn_seqs == 4);  // two sets of 2
    CHECK(plan->ranks[1].sets.size() == 2);
    CHECK(plan->b_max == 4);
    CHECK(plan->ranks[0].pads == 0);
    CHECK(plan->ranks[1].pads == 0);
}

TEST_CASE("plan_step pads the smaller rank (hand-simulated)") {
    // rank1 holds sets of 3 and 3, rank2 a set of 4, b = 4:
    // rank1 draws 3+3 = 6, rank2 draws 4, b_max = 6, rank2 pads 2.
    auto sets = make_sets({3, 3, 4});
    auto ranks = make_ranks(2);
    ranks[0].enqueue(&sets[0]);
    ranks[0].enqueue(&sets[1]);
    ranks[1].enqueue(&sets[2]);
    const auto plan = plan_step(ranks, 4);
    REQUIRE(plan.has_value());
    CHECK(plan->ranks[0].drawn_seqs == 6);
    CHECK(plan->ranks[1].drawn_seqs == 4);
    CHECK(plan->b_max == 6);
    CHECK(plan->ranks[0].pads == 0);
    CHECK(plan->ranks[1].pads == 2);
}

TEST_CASE("plan_step not ready when a rank is short") {
    auto sets = make_sets({2, 2});
    auto ranks = make_ranks(2);
    ranks[0].enqueue(&sets[0]);
    ranks[1].enqueue(&sets[1]);
    CHECK(!plan_step(ranks, 4).has_value());
    CHECK(ranks[0].q.size() == 1);  // nothing consumed
}

TEST_CASE("plan_step rejects sets larger than b") {
    auto sets = make_sets({5});
    auto ranks = make_ranks(1);
    ranks[0].enqueue(&sets[0]);
    CHECK_THROWS_AS(plan_step(ranks, 4), ConfigError);
}

TEST_CASE("pads is b_max minus drawn and zero for the argmax rank") {
    Rng rng(321);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> ms;
        for (int i = 0; i < 12; ++i) ms.push_back(static_cast<int>(rng.uniform_int(2, 4)));
        auto sets = make_sets(ms);
        auto ranks = make_ranks(3);
        for (size_t i = 0; i < sets.size(); ++i) ranks[i % 3].enqueue(&sets[i]);
        const auto plan = plan_step(ranks, 4);
        if (!plan.has_value()) continue;
        bool saw_zero_pad_at_max = false;
        for (const auto& d : plan->ranks) {
            CHECK(d.pads == plan->b_max - d.drawn_seqs);
            if (d.drawn_seqs == plan->b_max) {
                CHECK(d.pads == 0);
                saw_zero_pad_at_max = true;
            }
        }
        CHECK(saw_zero_pad_at_max);
    }
}

TEST_CASE("run_epoch: lockstep, conservation, atomicity") {
    Rng rng(777);
    for (int ranks_n : {2, 4, 8}) {
        std::vector<int> ms;
        for (int i = 0; i < 200; ++i) ms.push_back(static_cast<int>(rng.uniform_int(2, 4)));
        auto sets = make_sets(ms);
        std::vector<std::vector<const TraceSet*>> shards(ranks_n);
        for (size_t i = 0; i < sets.size(); ++i) shards[i % ranks_n].push_back(&sets[i]);
        auto ranks = make_ranks(ranks_n);

        std::vector<long long> steps_per_rank(ranks_n, 0);
        std::set<int64_t> seen;
        long long dup = 0, split = 0, seqs = 0;
        const auto rep = run_epoch(ranks, shards, 6, [&](const StepPlan& plan) {
            REQUIRE(static_cast<int>(plan.ranks.size()) == ranks_n);
            for (int r = 0; r < ranks_n; ++r) {
                steps_per_rank[r] += 1;  // every rank participates in every step
                for (const TraceSet* ts : plan.ranks[r].sets) {
                    if (!seen.insert(ts->id).second) ++dup;
                    seqs += ts->m();
                }
                // atomicity: drawn_seqs equals the sum of whole-set sizes
                int sum = 0;
                for (const TraceSet* ts : plan.ranks[r].sets) sum += ts->m();
                if (sum != plan.ranks[r].drawn_seqs) ++split;
            }
        });
        // lockstep: per-rank step counts identical by construction; verify
        for (int r = 1; r < ranks_n; ++r) CHECK(steps_per_rank[r] == steps_per_rank[0]);
        CHECK(dup == 0);
        CHECK(split == 0);
        CHECK(seen.size() == sets.size());  // every set consumed exactly once
        long long expected_seqs = 0;
        for (int m : ms) expected_seqs += m;
        CHECK(seqs == expected_seqs);
        CHECK(rep.seqs_consumed == expected_seqs);
        CHECK(rep.sets_consumed == static_cast<long long>(sets.size()));
    }
}

TEST_CASE("pad minimality per the greedy dequeue rule") {
    // A rank may pad only when it already drew >= b or its queue ran dry.
    Rng rng(31);
    std::vector<int> ms;
    for (int i = 0; i < 60; ++i) ms.push_back(static_cast<int>(rng.uniform_int(2, 4)));
    auto sets = make_sets(ms);
    std::vector<std::vector<const TraceSet*>> shards(4);
    for (size_t i = 0; i < sets.size(); ++i) shards[i % 4].push_back(&sets[i]);
    auto ranks = make_ranks(4);
    const int b = 5;
    run_epoch(ranks, shards, b, [&](const StepPlan& plan) {
        for (size_t r = 0; r < plan.ranks.size(); ++r) {
            const auto& d = plan.ranks[r];
            if (d.pads > 0) CHECK((d.drawn_seqs >= b || ranks[r].q.empty()));
        }
    });
    // the stronger form: inspect pads against the rule inside plan_step
    auto sets2 = make_sets({2, 2, 2, 4});
    auto ranks2 = make_ranks(2);
    ranks2[0].enqueue(&sets2[0]);
    ranks2[0].enqueue(&sets2[1]);
    ranks2[0].enqueue(&sets2[2]);
    ranks2[1].enqueue(&sets2[3]);
    const auto plan = plan_step(ranks2, 4);
    REQUIRE(plan.has_value());
    // rank0 reached b=4 with two sets and stops: one set of 2 remains queued
    CHECK(plan->ranks[0].drawn_seqs == 4);
    CHECK(ranks2[0].q.size() == 1);
    CHECK(plan->ranks[0].pads == 0);
}

TEST_CASE("ragged flush consumes leftovers without deadlock") {
    auto sets = make_sets({2, 2, 2, 2, 2, 3});
    std::vector<std::vector<const TraceSet*>> shards(2);
    shards[0] = {&sets[0], &sets[1], &sets[2], &sets[3], &sets[4]};
    shards[1] = {&sets[5]};
    auto ranks = make_ranks(2);
    long long steps = 0;
    std::set<int64_t> seen;
    const auto rep = run_epoch(ranks, shards, 6, [&](const StepPlan& plan) {
        ++steps;
        for (const auto& d : plan.ranks) {
            for (const TraceSet* ts : d.sets) seen.insert(ts->id);
        }
    });
    CHECK(seen.size() == sets.size());
    CHECK(rep.ragged_steps >= 1);  // rank1 can never reach b = 6 alone
    CHECK(ranks[0].q.empty());
    CHECK(ranks[1].q.empty());
}
