#include "setfork/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "setfork/errors.hpp"

namespace setfork {

using nlohmann::json;

std::string to_string(MatchingMode m) {
    switch (m) {
        case MatchingMode::kOptimal: return "optimal";
        case MatchingMode::kRandom: return "random";
        case MatchingMode::kSftSingle: return "sft_single";
        case MatchingMode::kSftFlatten: return "sft_flatten";
    }
    throw ConfigError("unknown matching mode");
}

MatchingMode matching_mode_from_string(const std::string& s) {
    if (s == "optimal") return MatchingMode::kOptimal;
    if (s == "random") return MatchingMode::kRandom;
    if (s == "sft_single" || s == "sft-single") return MatchingMode::kSftSingle;
    if (s == "sft_flatten" || s == "sft-flatten") return MatchingMode::kSftFlatten;
    throw ConfigError("unknown matching mode: " + s);
}

void TrainConfig::validate(int corpus_max_m) const {
    if (match_len < 1) throw ConfigError("train: match_len (T_L) must be >= 1");
    if (n_forking < 1) throw ConfigError("train: n_forking must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (global_batch < 1) throw ConfigError("train: global_batch must be >= 1");
    if (ranks < 1) throw ConfigError("train: ranks must be >= 1");
    if ((matching_mode == MatchingMode::kOptimal || matching_mode == MatchingMode::kRandom) &&
        corpus_max_m > n_forking) {
        throw ConfigError("train: matching requires N >= max M in corpus (N=" +
                          std::to_string(n_forking) + ", max M=" + std::to_string(corpus_max_m) + ")");
    }
    if (sigma_p_threshold < 0.0 || sigma_p_threshold > 1.0) throw ConfigError("train: bad tau");
}

void track_matching(MatchingStats& stats, const StepRecord& rec) {
    stats.counts[ConfigKey{rec.m, rec.k}] += 1;
    stats.steps.push_back(rec);
    ++stats.examples;
}

double matching_cost(const Model& model, const std::vector<TokenId>& prompt, int fork_index,
                     const std::vector<TokenId>& trace, int match_len) {
    const auto nll = model.forward_nll(prompt, fork_index, trace, match_len);
    double sum = 0.0;
    for (double v : nll) sum += v;
    return sum / static_cast<double>(nll.size());
}

CostMatrix build_cost_matrix(const Model& model, const TraceSet& ts, int n_forking, int match_len,
                             bool batched) {
    const int m = ts.m();
    CostMatrix cm;
    cm.n = n_forking;
    cm.m = m;
    cm.values.assign(static_cast<size_t>(n_forking) * m, 0.0);
    cm.n_tokens_used.assign(static_cast<size_t>(n_forking) * m, 0);
    if (batched) {
        SequenceBatch b;
        for (int i = 0; i < n_forking; ++i) {
            for (int j = 0; j < m; ++j) {
                b.add_row(ts.prompt, model.fork_tag(i + 1), ts.traces[j].tokens, match_len);
            }
        }
        b.pack(model.cfg.context_len);
        const std::vector<double> nll = model.score(b);
        for (int i = 0; i < n_forking; ++i) {
            for (int j = 0; j < m; ++j) {
                const int r = i * m + j;
                double sum = 0.0;
                int cnt = 0;
                for (int t = 0; t < b.T; ++t) {
                    const size_t idx = static_cast<size_t>(r) * b.T + t;
                    if (b.targets[idx] >= 0) {
                        sum += nll[idx];
                        ++cnt;
                    }
                }
                cm.at(i, j) = sum / cnt;
                cm.n_tokens_used[static_cast<size_t>(i) * m + j] = cnt;
            }
        }
    } else {
        for (int i = 0; i < n_forking; ++i) {
            for (int j = 0; j < m; ++j) {
                const auto nll = model.forward_nll(ts.prompt, i + 1, ts.traces[j].tokens, match_len);
                double sum = 0.0;
                for (double v : nll) sum += v;
                cm.at(i, j) = sum / static_cast<double>(nll.size());
                cm.n_tokens_used[static_cast<size_t>(i) * m + j] = static_cast<int>(nll.size());
            }
        }
    }
    cm.validate();
    return cm;
}

namespace {

// Gap diagnostics over the full configuration space (enumeration; skipped
// when P exceeds the cap).
void gap_metrics(const CostMatrix& cm, const MatchConfig& best_cfg, double best_total,
                 long long cap, double* second, double* mean_others) {
    *second = std::numeric_limits<double>::quiet_NaN();
    *mean_others = std::numeric_limits<double>::quiet_NaN();
    const long long p = config_count(cm.n, cm.m);
    if (p > cap || p < 2) return;
    ConfigSpace space = enumerate_configs(cm.n, cm.m, cap);
    double second_best = std::numeric_limits<double>::infinity();
    double sum_others = 0.0;
    for (const auto& cfg : space.all) {
        if (cfg == best_cfg) continue;
        double total = 0.0;
        for (int j = 0; j < cm.m; ++j) total += cm.at(cfg.sigma[j], j);
        second_best = std::min(second_best, total);
        sum_others += total;
    }
    *second = second_best;
    *mean_others = sum_others / static_cast<double>(p - 1);
}

// Accumulates gradients for one trace set under the chosen configuration.
// Returns the example's summed trace NLL.
double accumulate_set(Model& model, const TraceSet& ts, const MatchConfig& chosen,
                      double row_scale_value) {
    SequenceBatch b;
    for (int j = 0; j < ts.m(); ++j) {
        b.add_row(ts.prompt, model.fork_tag(chosen.sigma[j] + 1), ts.traces[j].tokens, -1);
    }
    b.pack(model.cfg.context_len);
    std::vector<double> scale(b.rows, row_scale_value);
    const auto res = model.forward_backward(b, scale);
    return res.total_nll;
}

// Matching + gradient accumulation for one example; stats updated with the
// optimal configuration (tracked in both optimal and random modes).
double process_matched_set(Model& model, const TraceSet& ts, const TrainConfig& cfg,
                           long step_index, MatchingStats& stats, Rng& match_rng,
                           double set_scale) {
    const int m = ts.m();
    const CostMatrix cm =
        build_cost_matrix(model, ts, cfg.n_forking, cfg.match_len, cfg.batched_cost_matrix);
    const MatchResult opt = hungarian(cm);

    StepRecord rec;
    rec.step = step_index;
    rec.record_id = ts.id;
    rec.m = m;
    ConfigSpace dims;
    dims.n = cfg.n_forking;
    dims.m = m;
    dims.p = config_count(cfg.n_forking, m);
    rec.k = config_index(dims, opt.config);
    rec.best = opt.total;
    gap_metrics(cm, opt.config, opt.total, cfg.gap_enum_cap, &rec.second, &rec.mean_others);

    MatchConfig chosen = cfg.matching_mode == MatchingMode::kOptimal
                             ? opt.config
                             : random_config(cfg.n_forking, m, match_rng);
    ++stats.injectivity_checks;
    if (!chosen.injective()) {
        ++stats.injectivity_violations;
        throw RunError("train: non-injective configuration applied at step " +
                       std::to_string(step_index));
    }
    const double row_scale = cfg.normalize_by_m ? set_scale / m : set_scale;
    rec.loss = accumulate_set(model, ts, chosen, row_scale);
    track_matching(stats, rec);
    return rec.loss;
}

}  // namespace

StepResult ssft_step(Model& model, const std::vector<const TraceSet*>& sets,
                     const TrainConfig& cfg, MatchingStats& stats, Rng& match_rng) {
    if (cfg.matching_mode != MatchingMode::kOptimal && cfg.matching_mode != MatchingMode::kRandom) {
        throw ConfigError("ssft_step: matching_mode must be optimal or random");
    }
    if (sets.empty()) throw ConfigError("ssft_step: empty minibatch");
    model.zero_grads();
    const double set_scale = 1.0 / static_cast<double>(sets.size());
    StepResult out;
    out.sets = static_cast<int>(sets.size());
    const long step_index = model.step;
    for (const TraceSet* ts : sets) {
        const double example_nll =
            process_matched_set(model, *ts, cfg, step_index, stats, match_rng, set_scale);
        out.loss += (cfg.normalize_by_m ? example_nll / ts->m() : example_nll) * set_scale;
    }
    model.optimizer_step(cfg.opt);
    return out;
}

StepResult sft_baseline_step(Model& model, const std::vector<const TraceSet*>& sets,
                             const TrainConfig& cfg) {
    if (sets.empty()) throw ConfigError("sft_baseline_step: empty minibatch");
    model.zero_grads();
    SequenceBatch b;
    for (const TraceSet* ts : sets) {
        if (cfg.matching_mode == MatchingMode::kSftSingle) {
            b.add_row(ts->prompt, model.fork_tag(1), ts->traces[0].tokens, -1);
        } else {
            for (const auto& tr : ts->traces) {
                b.add_row(ts->prompt, model.fork_tag(1), tr.tokens, -1);
            }
        }
    }
    b.pack(model.cfg.context_len);
    const double row_scale = 1.0 / b.rows;
    std::vector<double> scale(b.rows, row_scale);
    const auto res = model.forward_backward(b, scale);
    model.optimizer_step(cfg.opt);
    StepResult out;
    out.loss = res.total_nll * row_scale;
    out.sets = static_cast<int>(sets.size());
    return out;
}

LearnedMatching extract_sigma_p(const MatchingStats& stats, int n_forking, int window_epochs,
                                double tau) {
    if (stats.examples == 0) throw RunError("extract_sigma_p: empty run");
    const auto& snaps = stats.epoch_snapshots;
    std::map<ConfigKey, long long> window = snaps.empty() ? stats.counts : snaps.back();
    if (static_cast<int>(snaps.size()) > window_epochs) {
        const auto& base = snaps[snaps.size() - 1 - window_epochs];
        for (const auto& [key, cnt] : base) window[key] -= cnt;
    }
    long long total = 0;
    for (const auto& [key, cnt] : window) total += cnt;
    if (total <= 0) throw RunError("extract_sigma_p: empty final window");

    LearnedMatching lm;
    lm.n = n_forking;
    lm.tau = tau;
    lm.window_counts = window;
    for (const auto& [key, cnt] : window) {
        if (cnt <= 0) continue;
        if (static_cast<double>(cnt) / static_cast<double>(total) >= tau) {
            lm.sigma_p.push_back(key);
            ConfigSpace dims;
            dims.n = n_forking;
            dims.m = key.m;
            dims.p = config_count(n_forking, key.m);
            const MatchConfig cfg = config_at(dims, key.k);
            for (int j = 0; j < key.m; ++j) {
                lm.edge_weight[{cfg.sigma[j], j}] += cnt;
            }
        }
    }
    if (lm.sigma_p.empty()) throw RunError("extract_sigma_p: no configuration meets tau");
    lm.i_star = select_pass1_token(lm);
    return lm;
}

int select_pass1_token(const LearnedMatching& lm) {
    if (lm.edge_weight.empty()) throw RunError("select_pass1_token: no edges");
    std::vector<std::set<int>> distinct(lm.n);
    std::vector<long long> weighted(lm.n, 0);
    for (const auto& [edge, w] : lm.edge_weight) {
        const auto& [i, j] = edge;
        distinct[i].insert(j);
        weighted[i] += w;
    }
    int best = 0;
    for (int i = 1; i < lm.n; ++i) {
        const size_t di = distinct[i].size(), db = distinct[best].size();
        if (di > db || (di == db && weighted[i] > weighted[best])) best = i;
    }
    return best + 1;
}

namespace {

json key_to_json(const ConfigKey& key) { return json{{"m", key.m}, {"k", key.k}}; }

json counts_to_json(const std::map<ConfigKey, long long>& counts) {
    json arr = json::array();
    for (const auto& [key, cnt] : counts) {
        arr.push_back({{"m", key.m}, {"k", key.k}, {"count", cnt}});
    }
    return arr;
}

}  // namespace

void save_learned_matching(const std::string& path, const LearnedMatching& lm) {
    json j;
    j["n"] = lm.n;
    j["tau"] = lm.tau;
    j["i_star"] = lm.i_star;
    j["sigma_p"] = json::array();
    for (const auto& key : lm.sigma_p) j["sigma_p"].push_back(key_to_json(key));
    j["edges"] = json::array();
    for (const auto& [edge, w] : lm.edge_weight) {
        j["edges"].push_back({{"token", edge.first}, {"trace", edge.second}, {"weight", w}});
    }
    j["window_counts"] = counts_to_json(lm.window_counts);
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f << j.dump(2) << '\n';
}

LearnedMatching load_learned_matching(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    json j = json::parse(f);
    LearnedMatching lm;
    lm.n = j.at("n").get<int>();
    lm.tau = j.at("tau").get<double>();
    lm.i_star = j.at("i_star").get<int>();
    for (const auto& kj : j.at("sigma_p")) {
        lm.sigma_p.push_back(ConfigKey{kj.at("m").get<int>(), kj.at("k").get<long long>()});
    }
    for (const auto& ej : j.at("edges")) {
        lm.edge_weight[{ej.at("token").get<int>(), ej.at("trace").get<int>()}] =
            ej.at("weight").get<long long>();
    }
    for (const auto& cj : j.at("window_counts")) {
        lm.window_counts[ConfigKey{cj.at("m").get<int>(), cj.at("k").get<long long>()}] =
            cj.at("count").get<long long>();
    }
    return lm;
}

namespace {

std::vector<std::vector<const TraceSet*>> make_shards(const std::vector<const TraceSet*>& order,
                                                      int ranks) {
    std::vector<std::vector<const TraceSet*>> shards(ranks);
    for (size_t i = 0; i < order.size(); ++i) {
        shards[i % ranks].push_back(order[i]);
    }
    return shards;
}

// Executes one queue-planned step: accumulate gradients across every rank's
// draw (fixed rank order), pad rows carry no targets, one optimizer update.
struct QueueExecutor {
    Model* model;
    const TrainConfig* cfg;
    MatchingStats* stats;
    Rng* match_rng;
    std::vector<double>* step_losses;
    bool count_only = false;
    long steps = 0;

    void operator()(const StepPlan& plan) {
        ++steps;
        if (count_only) return;
        int total_sets = 0;
        for (const auto& d : plan.ranks) total_sets += static_cast<int>(d.sets.size());
        if (total_sets == 0) return;  // all-pad flush step: nothing to learn
        model->zero_grads();
        const double set_scale = 1.0 / static_cast<double>(total_sets);
        double loss = 0.0;
        const long step_index = model->step;
        for (const auto& draw : plan.ranks) {
            for (const TraceSet* ts : draw.sets) {
                double example_nll;
                if (cfg->matching_mode == MatchingMode::kOptimal ||
                    cfg->matching_mode == MatchingMode::kRandom) {
                    example_nll = process_matched_set(*model, *ts, *cfg, step_index, *stats,
                                                      *match_rng, set_scale);
                } else {
                    SequenceBatch b;
                    if (cfg->matching_mode == MatchingMode::kSftSingle) {
                        b.add_row(ts->prompt, model->fork_tag(1), ts->traces[0].tokens, -1);
                    } else {
                        for (const auto& tr : ts->traces) {
                            b.add_row(ts->prompt, model->fork_tag(1), tr.tokens, -1);
                        }
                    }
                    b.pack(model->cfg.context_len);
                    std::vector<double> scale(b.rows, set_scale);
                    example_nll = model->forward_backward(b, scale).total_nll;
                }
                loss += (cfg->normalize_by_m ? example_nll / ts->m() : example_nll) * set_scale;
            }
            if (draw.pads > 0) {
                SequenceBatch b;
                for (int i = 0; i < draw.pads; ++i) b.add_pad_row();
                b.pack(model->cfg.context_len);
                std::vector<double> scale(b.rows, set_scale);
                model->forward_backward(b, scale);
            }
        }
        model->optimizer_step(cfg->opt);
        step_losses->push_back(loss);
    }
};

void write_outputs(const std::string& out_dir, const Model& model, const TrainConfig& cfg,
                   const TrainResult& result) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream f(out_dir + "/stats.jsonl");
        if (!f) throw IoError("cannot open for write: " + out_dir + "/stats.jsonl");
        for (const auto& rec : result.stats.steps) {
            json j;
            j["step"] = rec.step;
            j["id"] = rec.record_id;
            j["m"] = rec.m;
            j["k"] = rec.k;
            j["best"] = rec.best;
            if (std::isfinite(rec.second)) j["second"] = rec.second;
            if (std::isfinite(rec.mean_others)) j["mean_others"] = rec.mean_others;
            j["loss"] = rec.loss;
            f << j.dump() << '\n';
        }
    }
    {
        json j;
        j["epochs"] = json::array();
        for (const auto& snap : result.stats.epoch_snapshots) j["epochs"].push_back(counts_to_json(snap));
        j["final"] = counts_to_json(result.stats.counts);
        j["examples"] = result.stats.examples;
        std::ofstream f(out_dir + "/counts.json");
        f << j.dump(2) << '\n';
    }
    if (cfg.matching_mode == MatchingMode::kOptimal || cfg.matching_mode == MatchingMode::kRandom) {
        save_learned_matching(out_dir + "/learned_matching.json", result.learned);
    }
    {
        json j;
        j["matching_mode"] = to_string(cfg.matching_mode);
        j["steps"] = result.steps;
        j["examples"] = result.stats.examples;
        j["injectivity_checks"] = result.stats.injectivity_checks;
        j["injectivity_violations"] = result.stats.injectivity_violations;
        j["step_losses"] = result.step_losses;
        std::ofstream f(out_dir + "/train_summary.json");
        f << j.dump(2) << '\n';
    }
    model.save(out_dir + "/checkpoint.bin");
}

}  // namespace

TrainResult train_run(Model& model, const std::vector<TraceSet>& corpus, const TrainConfig& cfg_in,
                      const std::string& out_dir, bool verbose) {
    if (corpus.empty()) throw ConfigError("train: empty corpus");
    int max_m = 0;
    for (const auto& ts : corpus) max_m = std::max(max_m, ts.m());
    TrainConfig cfg = cfg_in;
    cfg.validate(max_m);

    const bool matched_mode = cfg.matching_mode == MatchingMode::kOptimal ||
                              cfg.matching_mode == MatchingMode::kRandom;
    const int b = cfg.rank_batch > 0 ? cfg.rank_batch
                                     : std::max(max_m, cfg.global_batch * max_m / cfg.ranks);

    // Shuffled visit order per epoch, fixed by the seed alone.
    auto epoch_order = [&](int epoch) {
        std::vector<const TraceSet*> order(corpus.size());
        for (size_t i = 0; i < corpus.size(); ++i) order[i] = &corpus[i];
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5a0000ULL + epoch));
        for (size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[shuffle_rng.uniform_int(0, static_cast<int64_t>(i))]);
        }
        return order;
    };

    // Fix the schedule horizon up front (dry-run the planner on the queue path).
    if (cfg.opt.total_steps <= 0) {
        long total = 0;
        if (cfg.use_queue_batching) {
            for (int e = 0; e < cfg.epochs; ++e) {
                auto shards = make_shards(epoch_order(e), cfg.ranks);
                std::vector<RankQueue> ranks(cfg.ranks);
                for (int r = 0; r < cfg.ranks; ++r) ranks[r].rank = r;
                long count = 0;
                run_epoch(ranks, shards, b, [&](const StepPlan&) { ++count; });
                total += count;
            }
        } else {
            const long per_epoch =
                (static_cast<long>(corpus.size()) + cfg.global_batch - 1) / cfg.global_batch;
            total = per_epoch * cfg.epochs;
        }
        cfg.opt.total_steps = total;
    }

    TrainResult result;
    Rng match_rng(derive_seed(cfg.seed, 0x3a7cc));
    for (int e = 0; e < cfg.epochs; ++e) {
        auto order = epoch_order(e);
        if (cfg.use_queue_batching) {
            auto shards = make_shards(order, cfg.ranks);
            std::vector<RankQueue> ranks(cfg.ranks);
            for (int r = 0; r < cfg.ranks; ++r) ranks[r].rank = r;
            QueueExecutor exec{&model, &cfg, &result.stats, &match_rng, &result.step_losses};
            result.epoch_reports.push_back(run_epoch(ranks, shards, b, std::ref(exec)));
            result.steps += exec.steps;
        } else {
            for (size_t at = 0; at < order.size(); at += cfg.global_batch) {
                const size_t end = std::min(order.size(), at + cfg.global_batch);
                std::vector<const TraceSet*> chunk(order.begin() + at, order.begin() + end);
                const StepResult sr = matched_mode
                                          ? ssft_step(model, chunk, cfg, result.stats, match_rng)
                                          : sft_baseline_step(model, chunk, cfg);
                result.step_losses.push_back(sr.loss);
                ++result.steps;
            }
        }
        result.stats.epoch_snapshots.push_back(result.stats.counts);
        if (verbose) {
            double mean_loss = 0.0;
            const size_t from = result.step_losses.size() > 8 ? result.step_losses.size() - 8 : 0;
            for (size_t i = from; i < result.step_losses.size(); ++i) mean_loss += result.step_losses[i];
            mean_loss /= std::max<size_t>(1, result.step_losses.size() - from);
            std::fprintf(stderr, "epoch %d/%d  step %ld  loss %.4f\n", e + 1, cfg.epochs,
                         result.steps, mean_loss);
        }
    }

    if (matched_mode) {
        result.learned = extract_sigma_p(result.stats, cfg.n_forking, cfg.sigma_p_window_epochs,
                                         cfg.sigma_p_threshold);
    }
    if (!out_dir.empty()) write_outputs(out_dir, model, cfg, result);
    return result;
}

}  // namespace setfork
