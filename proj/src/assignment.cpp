#include "setfork/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "setfork/errors.hpp"

namespace setfork {

void CostMatrix::validate() const {
    if (n < 1 || m < 1) throw ConfigError("cost matrix: empty");
    if (n < m) throw ConfigError("cost matrix: requires N >= M (got N=" + std::to_string(n) +
                                 ", M=" + std::to_string(m) + ")");
    if (values.size() != static_cast<size_t>(n) * m) throw ConfigError("cost matrix: bad shape");
    for (double v : values) {
        if (!std::isfinite(v)) throw NonFiniteError("cost matrix: non-finite entry");
    }
}

bool MatchConfig::injective() const {
    std::vector<int> seen;
    for (int i : sigma) {
        if (std::find(seen.begin(), seen.end(), i) != seen.end()) return false;
        seen.push_back(i);
    }
    return true;
}

long long config_count(int n, int m) {
    if (m < 1 || n < m) throw ConfigError("config space: requires 1 <= M <= N");
    if (n > 20) throw ConfigError("config space: N too large to count exactly");
    long long p = 1;
    for (int j = 0; j < m; ++j) p *= (n - j);  // C(n,m)*m! = n!/(n-m)!
    return p;
}

namespace {

// Number of injective completions after j values are fixed: (n-j)!/(n-m)!.
long long completions(int n, int m, int j) {
    long long p = 1;
    for (int t = j; t < m; ++t) p *= (n - t);
    return p;
}

}  // namespace

ConfigSpace enumerate_configs(int n, int m, long long cap) {
    const long long p = config_count(n, m);
    if (p > cap) {
        throw CapExceededError("config space: P=" + std::to_string(p) + " exceeds cap " +
                               std::to_string(cap));
    }
    ConfigSpace space;
    space.n = n;
    space.m = m;
    space.p = p;
    space.all.reserve(static_cast<size_t>(p));
    std::vector<int> sigma(m, -1);
    std::vector<bool> used(n, false);
    // Depth-first in ascending token order yields lexicographic output.
    auto rec = [&](auto&& self, int j) -> void {
        if (j == m) {
            space.all.push_back(MatchConfig{sigma});
            return;
        }
        for (int i = 0; i < n; ++i) {
            if (used[i]) continue;
            used[i] = true;
            sigma[j] = i;
            self(self, j + 1);
            used[i] = false;
        }
    };
    rec(rec, 0);
    return space;
}

long long config_index(const ConfigSpace& space, const MatchConfig& config) {
    if (config.m() != space.m) throw ConfigError("config_index: M mismatch");
    if (!config.injective()) throw ConfigError("config_index: config not injective");
    std::vector<bool> used(space.n, false);
    long long rank = 0;
    for (int j = 0; j < space.m; ++j) {
        const int v = config.sigma[j];
        if (v < 0 || v >= space.n) throw ConfigError("config_index: token index out of range");
        int smaller = 0;
        for (int i = 0; i < v; ++i) smaller += used[i] ? 0 : 1;
        rank += smaller * completions(space.n, space.m, j + 1);
        used[v] = true;
    }
    return rank + 1;
}

MatchConfig config_at(const ConfigSpace& space, long long k) {
    if (k < 1 || k > space.p) throw ConfigError("config_at: index out of range");
    long long rank = k - 1;
    std::vector<bool> used(space.n, false);
    MatchConfig out;
    out.sigma.resize(space.m);
    for (int j = 0; j < space.m; ++j) {
        const long long block = completions(space.n, space.m, j + 1);
        long long skip = rank / block;
        rank %= block;
        for (int i = 0; i < space.n; ++i) {
            if (used[i]) continue;
            if (skip == 0) {
                out.sigma[j] = i;
                used[i] = true;
                break;
            }
            --skip;
        }
    }
    return out;
}

namespace {

// Classic O(nn^3) shortest-augmenting-path assignment on a square matrix.
// Returns the minimal total; rowsol[r] = assigned column.
double square_assign(const std::vector<double>& cost, int nn, std::vector<int>& rowsol) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(nn + 1, 0.0), v(nn + 1, 0.0), minv(nn + 1);
    std::vector<int> p(nn + 1, 0), way(nn + 1, 0);
    std::vector<char> used(nn + 1);
    for (int i = 1; i <= nn; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = kInf;
            for (int j = 1; j <= nn; ++j) {
                if (used[j]) continue;
                const double cur = cost[static_cast<size_t>(i0 - 1) * nn + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= nn; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    rowsol.assign(nn, -1);
    for (int j = 1; j <= nn; ++j) {
        if (p[j] > 0) rowsol[p[j] - 1] = j - 1;
    }
    double total = 0.0;
    for (int r = 0; r < nn; ++r) total += cost[static_cast<size_t>(r) * nn + rowsol[r]];
    return total;
}

// Minimal assignment cost of traces[j0..] onto the unused tokens. Rows are
// traces (padded with zero-cost dummies), columns are the remaining tokens.
double remainder_min(const CostMatrix& cost, int j0, const std::vector<bool>& token_used) {
    std::vector<int> tokens;
    for (int i = 0; i < cost.n; ++i) {
        if (!token_used[i]) tokens.push_back(i);
    }
    const int traces = cost.m - j0;
    const int nn = static_cast<int>(tokens.size());
    if (traces == 0) return 0.0;
    std::vector<double> sq(static_cast<size_t>(nn) * nn, 0.0);
    for (int r = 0; r < traces; ++r) {
        for (int c = 0; c < nn; ++c) {
            sq[static_cast<size_t>(r) * nn + c] = cost.at(tokens[c], j0 + r);
        }
    }
    std::vector<int> rowsol;
    return square_assign(sq, nn, rowsol);
}

}  // namespace

MatchResult hungarian(const CostMatrix& cost) {
    cost.validate();
    const int n = cost.n, m = cost.m;

    // Optimal value first: traces as rows, dummy rows fill the square.
    std::vector<double> sq(static_cast<size_t>(n) * n, 0.0);
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) sq[static_cast<size_t>(j) * n + i] = cost.at(i, j);
    }
    std::vector<int> rowsol;
    const double best = square_assign(sq, n, rowsol);

    // Lexicographic reconstruction: among cost-equal optima pick the lowest
    // canonical index. Scale-relative tolerance identifies "equal".
    double scale = 1.0;
    for (double v : cost.values) scale = std::max(scale, std::abs(v));
    const double tol = 1e-9 * scale * std::max(1, m);

    MatchResult out;
    out.config.sigma.assign(m, -1);
    std::vector<bool> used(n, false);
    double prefix = 0.0;
    for (int j = 0; j < m; ++j) {
        int fallback = -1;
        double fallback_gap = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            if (used[i]) continue;
            used[i] = true;
            const double candidate = prefix + cost.at(i, j) + remainder_min(cost, j + 1, used);
            used[i] = false;
            const double gap = std::abs(candidate - best);
            if (gap <= tol) {
                out.config.sigma[j] = i;
                break;
            }
            if (gap < fallback_gap) {
                fallback_gap = gap;
                fallback = i;
            }
        }
        if (out.config.sigma[j] < 0) out.config.sigma[j] = fallback;  // numeric safety net
        used[out.config.sigma[j]] = true;
        prefix += cost.at(out.config.sigma[j], j);
    }
    out.total = 0.0;
    for (int j = 0; j < m; ++j) out.total += cost.at(out.config.sigma[j], j);
    return out;
}

MatchConfig random_config(int n, int m, Rng& rng) {
    if (m < 1 || n < m) throw ConfigError("random_config: requires 1 <= M <= N");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    MatchConfig out;
    out.sigma.resize(m);
    for (int j = 0; j < m; ++j) {
        const int pick = static_cast<int>(rng.uniform_int(0, n - 1 - j));
        out.sigma[j] = pool[pick];
        pool.erase(pool.begin() + pick);
    }
    return out;
}

MatchConfig random_config(int n, int m, uint64_t seed) {
    Rng rng(seed);
    return random_config(n, m, rng);
}

}  // namespace setfork
