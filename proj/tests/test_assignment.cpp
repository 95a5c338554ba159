#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "setfork/assignment.hpp"
#include "setfork/errors.hpp"
#include "setfork/rng.hpp"

using namespace setfork;

namespace {

CostMatrix random_cost(int n, int m, Rng& rng) {
    CostMatrix cm;
    cm.n = n;
    cm.m = m;
    cm.values.resize(static_cast<size_t>(n) * m);
    cm.n_tokens_used.assign(cm.values.size(), 1);
    for (double& v : cm.values) v = rng.uniform() * 4.0;
    return cm;
}

// Enumeration oracle: scan every configuration in canonical order, strict
// improvement only, so ties resolve to the lowest index.
MatchResult brute_force(const CostMatrix& cm) {
    const ConfigSpace space = enumerate_configs(cm.n, cm.m);
    MatchResult best;
    best.total = 1e300;
    for (const auto& cfg : space.all) {
        double total = 0.0;
        for (int j = 0; j < cm.m; ++j) total += cm.at(cfg.sigma[j], j);
        if (total < best.total) {
            best.total = total;
            best.config = cfg;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("config space counts") {
    CHECK(enumerate_configs(6, 4).p == 360);
    CHECK(enumerate_configs(4, 4).p == 24);
    const auto space = enumerate_configs(1, 1);
    CHECK(space.p == 1);
    CHECK(space.all[0].sigma == std::vector<int>{0});
    CHECK_THROWS_AS(enumerate_configs(3, 4), ConfigError);
    CHECK_THROWS_AS(enumerate_configs(12, 10, 1000), CapExceededError);
}

TEST_CASE("lexicographic order and index round trip") {
    const auto space22 = enumerate_configs(2, 2);
    CHECK(space22.all[0].sigma == std::vector<int>{0, 1});  // index 1 = {1->1, 2->2}
    CHECK(space22.all[1].sigma == std::vector<int>{1, 0});  // index 2 = {1->2, 2->1}
    CHECK(config_index(space22, space22.all[0]) == 1);
    CHECK(config_index(space22, space22.all[1]) == 2);

    const auto space64 = enumerate_configs(6, 4);
    CHECK(space64.all.front().sigma == std::vector<int>{0, 1, 2, 3});
    // last element of the lexicographic enumeration: {1->6, 2->5, 3->4, 4->3}
    CHECK(space64.all.back().sigma == std::vector<int>{5, 4, 3, 2});
    CHECK(config_index(space64, space64.all.back()) == 360);
    for (long long k = 1; k <= space64.p; ++k) {
        const MatchConfig cfg = config_at(space64, k);
        CHECK(cfg == space64.all[k - 1]);
        CHECK(config_index(space64, cfg) == k);
        CHECK(cfg.injective());
    }
}

TEST_CASE("hungarian trivial cases") {
    CostMatrix cm;
    cm.n = cm.m = 2;
    cm.values = {1.0, 2.0, 2.0, 1.0};
    cm.n_tokens_used = {1, 1, 1, 1};
    const auto res = hungarian(cm);
    CHECK(res.config.sigma == std::vector<int>{0, 1});
    CHECK(res.total == 2.0);

    // Constant matrix: every config ties, lowest canonical index wins.
    CostMatrix cc;
    cc.n = 4;
    cc.m = 3;
    cc.values.assign(12, 0.7);
    cc.n_tokens_used.assign(12, 1);
    const auto rc = hungarian(cc);
    CHECK(rc.config.sigma == std::vector<int>{0, 1, 2});
    CHECK(rc.total == doctest::Approx(3 * 0.7).epsilon(1e-15));
    const auto space = enumerate_configs(4, 3);
    CHECK(config_index(space, rc.config) == 1);
}

TEST_CASE("hungarian equals enumeration oracle on random matrices") {
    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        const CostMatrix cm = random_cost(6, 4, rng);
        const auto fast = hungarian(cm);
        const auto slow = brute_force(cm);
        CHECK(fast.total == slow.total);  // exact: same config, same sum order
        CHECK(fast.config == slow.config);
    }
}

TEST_CASE("hungarian optimal across all shapes up to N=5 (unit sweep)") {
    Rng rng(5150);
    for (int n = 1; n <= 5; ++n) {
        for (int m = 1; m <= n; ++m) {
            for (int trial = 0; trial < 50; ++trial) {
                const CostMatrix cm = random_cost(n, m, rng);
                const auto fast = hungarian(cm);
                const auto slow = brute_force(cm);
                CHECK(fast.total == slow.total);
                CHECK(fast.config == slow.config);
            }
        }
    }
}

TEST_CASE("permutation equivariance of the optimal matching") {
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const CostMatrix cm = random_cost(5, 3, rng);
        const auto base = hungarian(cm);
        // permute columns by pi: new column j holds old column pi[j]
        std::vector<int> pi = {0, 1, 2};
        for (int i = 2; i > 0; --i) std::swap(pi[i], pi[rng.uniform_int(0, i)]);
        CostMatrix pm = cm;
        for (int i = 0; i < cm.n; ++i) {
            for (int j = 0; j < cm.m; ++j) pm.at(i, j) = cm.at(i, pi[j]);
        }
        const auto perm = hungarian(pm);
        CHECK(perm.total == doctest::Approx(base.total).epsilon(1e-12));
        CHECK(perm.config.injective());
        // sigma'(j) must assign the same token to the same underlying trace
        for (int j = 0; j < cm.m; ++j) {
            CHECK(perm.config.sigma[j] == base.config.sigma[pi[j]]);
        }
    }
}

TEST_CASE("column-constant shift moves the total by exactly that constant") {
    Rng rng(4242);
    for (int trial = 0; trial < 100; ++trial) {
        const CostMatrix cm = random_cost(5, 4, rng);
        const auto base = hungarian(cm);
        CostMatrix shifted = cm;
        const double delta = 0.75;
        for (int i = 0; i < cm.n; ++i) shifted.at(i, 2) += delta;
        const auto res = hungarian(shifted);
        CHECK(res.total == doctest::Approx(base.total + delta).epsilon(1e-12));
        CHECK(res.config == base.config);
    }
}

TEST_CASE("random_config is injective and roughly uniform") {
    Rng rng(9);
    const auto space = enumerate_configs(4, 2);  // P = 12
    std::vector<long long> counts(space.p, 0);
    const int draws = 24000;
    for (int i = 0; i < draws; ++i) {
        const MatchConfig cfg = random_config(4, 2, rng);
        CHECK(cfg.injective());
        counts[config_index(space, cfg) - 1] += 1;
    }
    const double expect = static_cast<double>(draws) / space.p;
    for (long long c : counts) {
        CHECK(std::abs(c - expect) < 5.0 * std::sqrt(expect));  // ~5 sigma
    }
}

TEST_CASE("invalid inputs are rejected") {
    CostMatrix cm;
    cm.n = 2;
    cm.m = 3;
    cm.values.assign(6, 1.0);
    cm.n_tokens_used.assign(6, 1);
    CHECK_THROWS_AS(hungarian(cm), ConfigError);  // N < M rejected, not transposed

    CostMatrix nf;
    nf.n = nf.m = 2;
    nf.values = {1.0, std::nan(""), 0.0, 1.0};
    nf.n_tokens_used.assign(4, 1);
    CHECK_THROWS_AS(hungarian(nf), NonFiniteError);
}
