#pragma once
#include <cstdint>
#include <vector>

#include "setfork/rng.hpp"

namespace setfork {

// Length-normalized matching costs (nats/token), gradient-isolated by
// construction. Rows are forking tokens (n), columns are traces (m), n >= m.
struct CostMatrix {
    int n = 0, m = 0;
    std::vector<double> values;        // n*m
    std::vector<int> n_tokens_used;    // trace tokens actually scored per entry

    double at(int i, int j) const { return values[static_cast<size_t>(i) * m + j]; }
    double& at(int i, int j) { return values[static_cast<size_t>(i) * m + j]; }
    void validate() const;  // finite entries, n >= m
};

// Injective map from trace index j to forking-token index sigma[j]; 0-based.
struct MatchConfig {
    std::vector<int> sigma;

    int m() const { return static_cast<int>(sigma.size()); }
    bool injective() const;
    bool operator==(const MatchConfig& o) const { return sigma == o.sigma; }
};

// All C(n,m)*m! injective maps in lexicographic order of (sigma[0..m-1]).
struct ConfigSpace {
    int n = 0, m = 0;
    long long p = 0;
    std::vector<MatchConfig> all;
};

long long config_count(int n, int m);

// Throws CapExceededError when config_count(n, m) > cap and ConfigError for
// n < m. The enumeration is a test oracle, capped against factorial blowup.
ConfigSpace enumerate_configs(int n, int m, long long cap = 1000000);

// Mutually inverse; k is 1-based (k = 1..P).
long long config_index(const ConfigSpace& space, const MatchConfig& config);
MatchConfig config_at(const ConfigSpace& space, long long k);

struct MatchResult {
    MatchConfig config;
    double total = 0.0;
};

// Exact minimum-cost assignment of every trace to a distinct forking token;
// cost ties resolve to the lowest canonical config index. The reported total
// is the direct sum of the chosen entries in column order.
MatchResult hungarian(const CostMatrix& cost);

// Uniform over all config_count(n, m) configurations.
MatchConfig random_config(int n, int m, Rng& rng);
MatchConfig random_config(int n, int m, uint64_t seed);

}  // namespace setfork
