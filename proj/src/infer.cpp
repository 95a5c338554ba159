#include "setfork/infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "setfork/errors.hpp"

namespace setfork {

using nlohmann::json;

std::string extract_answer(const Vocab& vocab, const std::vector<TokenId>& tokens) {
    int sep = -1;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == Vocab::kAnswerSep) sep = static_cast<int>(i);
    }
    if (sep < 0) return kNoAnswer;
    std::string out;
    for (size_t i = sep + 1; i < tokens.size(); ++i) {
        if (tokens[i] == Vocab::kEos) break;
        out += vocab.symbol(tokens[i]);
    }
    return out.empty() ? kNoAnswer : out;
}

namespace {

int think_length(const std::vector<TokenId>& tokens) {
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == Vocab::kAnswerSep) return static_cast<int>(i);
    }
    return static_cast<int>(tokens.size());
}

}  // namespace

GenerationSet parallel_generate(const Model& model, const Vocab& vocab,
                                const std::vector<TokenId>& prompt, int k, int n_forking,
                                const GenConfig& gen) {
    if (k < 1) throw ConfigError("parallel_generate: k must be >= 1");
    GenerationSet out;
    out.gens.resize(k);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < k; ++i) {
        GenConfig g = gen;
        g.seed = derive_seed(gen.seed, 0x9e0000ULL + i);
        Generation r;
        r.fork_index = 1 + (i % n_forking);
        r.tokens = model.sample(prompt, r.fork_index, g);
        r.answer = extract_answer(vocab, r.tokens);
        r.think_len = think_length(r.tokens);
        out.gens[i] = std::move(r);
    }
    return out;
}

std::string majority_vote(const GenerationSet& gens) {
    if (gens.gens.empty()) throw ConfigError("majority_vote: no generations");
    std::string best;
    int best_count = 0;
    size_t best_first = 0;
    for (size_t i = 0; i < gens.gens.size(); ++i) {
        const std::string& a = gens.gens[i].answer;
        if (a == kNoAnswer) continue;
        int count = 0;
        size_t first = i;
        for (size_t j = 0; j < gens.gens.size(); ++j) {
            if (gens.gens[j].answer == a) {
                if (count == 0) first = j;
                ++count;
            }
        }
        if (count > best_count || (count == best_count && count > 0 && first < best_first)) {
            best = a;
            best_count = count;
            best_first = first;
        }
    }
    return best_count > 0 ? best : kNoAnswer;
}

double pass_at_k(int n, int c, int k) {
    if (n < 1 || c < 0 || c > n || k < 1 || k > n) throw ConfigError("pass_at_k: bad arguments");
    if (c == 0) return 0.0;
    if (n - c < k) return 1.0;
    // 1 - prod_{i=0}^{k-1} (n-c-i)/(n-i)
    double q = 1.0;
    for (int i = 0; i < k; ++i) q *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    return 1.0 - q;
}

double eval_pass1(const Model& model, const Vocab& vocab, const std::vector<TraceSet>& eval_set,
                  int fork_index, int reps, const GenConfig& gen, uint64_t seed) {
    if (eval_set.empty() || reps < 1) throw ConfigError("eval_pass1: empty evaluation");
    long long correct = 0, total = 0;
#pragma omp parallel for collapse(2) schedule(dynamic) reduction(+ : correct, total)
    for (size_t q = 0; q < eval_set.size(); ++q) {
        for (int r = 0; r < reps; ++r) {
            GenConfig g = gen;
            g.seed = derive_seed(seed, 0xabc000ULL + q * 1000 + r);
            const auto tokens = model.sample(eval_set[q].prompt, fork_index, g);
            const std::string ans = extract_answer(vocab, tokens);
            correct += ans == eval_set[q].answer_truth ? 1 : 0;
            total += 1;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

double eval_consk(const Model& model, const Vocab& vocab, const std::vector<TraceSet>& eval_set,
                  int k, int sets, int n_forking, const GenConfig& gen, uint64_t seed) {
    if (eval_set.empty() || sets < 1 || k < 1) throw ConfigError("eval_consk: empty evaluation");
    long long correct = 0, total = 0;
    for (size_t q = 0; q < eval_set.size(); ++q) {
        for (int s = 0; s < sets; ++s) {
            GenConfig g = gen;
            g.seed = derive_seed(seed, 0xc05000ULL + q * 1000 + s);
            const GenerationSet gens = parallel_generate(model, vocab, eval_set[q].prompt, k,
                                                         n_forking, g);
            correct += majority_vote(gens) == eval_set[q].answer_truth ? 1 : 0;
            total += 1;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<double> eval_passk_curve(const Model& model, const Vocab& vocab,
                                     const std::vector<TraceSet>& eval_set, int n_gens,
                                     const std::vector<int>& ks, int n_forking,
                                     const GenConfig& gen, uint64_t seed) {
    std::vector<double> out(ks.size(), 0.0);
    for (size_t q = 0; q < eval_set.size(); ++q) {
        GenConfig g = gen;
        g.seed = derive_seed(seed, 0xbaca00ULL + q);
        const GenerationSet gens =
            parallel_generate(model, vocab, eval_set[q].prompt, n_gens, n_forking, g);
        int c = 0;
        for (const auto& r : gens.gens) c += r.answer == eval_set[q].answer_truth ? 1 : 0;
        for (size_t i = 0; i < ks.size(); ++i) out[i] += pass_at_k(n_gens, c, ks[i]);
    }
    for (double& v : out) v /= static_cast<double>(eval_set.size());
    return out;
}

namespace {

double quantile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double idx = p * (static_cast<double>(v.size()) - 1.0);
    const size_t lo = static_cast<size_t>(idx);
    const size_t hi = std::min(v.size() - 1, lo + 1);
    const double w = idx - static_cast<double>(lo);
    return v[lo] * (1.0 - w) + v[hi] * w;
}

double total_variation(const std::map<int, double>& a, const std::map<int, double>& b) {
    std::map<int, double> keys;
    for (const auto& [k, v] : a) keys[k] += 0.0;
    for (const auto& [k, v] : b) keys[k] += 0.0;
    double tv = 0.0;
    for (const auto& [k, unused] : keys) {
        const double pa = a.count(k) ? a.at(k) : 0.0;
        const double pb = b.count(k) ? b.at(k) : 0.0;
        tv += std::abs(pa - pb);
    }
    return 0.5 * tv;
}

}  // namespace

ModeReport mode_report(const Model& model, const Vocab& vocab,
                       const std::vector<TraceSet>& eval_set, int n_forking, int reps,
                       const GenConfig& gen, const StyleOracle& oracle, uint64_t seed) {
    constexpr int kUnclassifiable = -1;
    ModeReport rep;
    rep.tokens.resize(n_forking);
    for (int i = 1; i <= n_forking; ++i) {
        TokenModeStats& st = rep.tokens[i - 1];
        st.fork_index = i;
        std::vector<double> lens;
        long long correct = 0, total = 0;
        for (size_t q = 0; q < eval_set.size(); ++q) {
            for (int r = 0; r < reps; ++r) {
                GenConfig g = gen;
                g.seed = derive_seed(seed, 0x30d000ULL + (i * 7919 + q) * 1000 + r);
                const auto tokens = model.sample(eval_set[q].prompt, i, g);
                const int tl = think_length(tokens);
                lens.push_back(tl);
                correct += extract_answer(vocab, tokens) == eval_set[q].answer_truth ? 1 : 0;
                total += 1;
                try {
                    std::vector<TokenId> body(tokens.begin(), tokens.begin() + tl);
                    st.style_counts[oracle.classify(vocab, body)] += 1;
                } catch (const UnclassifiableError&) {
                    st.style_counts[kUnclassifiable] += 1;
                    ++st.unclassifiable;
                }
            }
        }
        double sum = 0.0;
        for (double l : lens) sum += l;
        st.mean_len = lens.empty() ? 0.0 : sum / static_cast<double>(lens.size());
        st.len_p10 = quantile(lens, 0.10);
        st.len_p50 = quantile(lens, 0.50);
        st.len_p90 = quantile(lens, 0.90);
        st.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    }
    // Collapse scores over normalized per-token style distributions.
    std::vector<std::map<int, double>> dists(n_forking);
    for (int i = 0; i < n_forking; ++i) {
        long long total = 0;
        for (const auto& [s, c] : rep.tokens[i].style_counts) total += c;
        for (const auto& [s, c] : rep.tokens[i].style_counts) {
            dists[i][s] = total > 0 ? static_cast<double>(c) / static_cast<double>(total) : 0.0;
        }
    }
    double sum_tv = 0.0;
    int pairs = 0;
    for (int a = 0; a < n_forking; ++a) {
        for (int b = a + 1; b < n_forking; ++b) {
            const double tv = total_variation(dists[a], dists[b]);
            sum_tv += tv;
            rep.collapse_max_tv = std::max(rep.collapse_max_tv, tv);
            ++pairs;
        }
    }
    rep.collapse_mean_tv = pairs > 0 ? sum_tv / pairs : 0.0;
    return rep;
}

EvalReport run_eval(const Model& model, const Vocab& vocab, const std::vector<TraceSet>& eval_set,
                    int n_forking, int pass1_token, const StyleOracle* oracle,
                    const EvalConfig& cfg) {
    if (eval_set.empty()) throw ConfigError("run_eval: empty evaluation set");
    EvalReport rep;
    rep.questions = static_cast<int>(eval_set.size());
    rep.pass1_per_token.resize(n_forking);
    for (int i = 1; i <= n_forking; ++i) {
        rep.pass1_per_token[i - 1] = eval_pass1(model, vocab, eval_set, i, cfg.pass1_reps, cfg.gen,
                                                derive_seed(cfg.seed, 0x100 + i));
    }
    rep.pass1_token = pass1_token;
    rep.pass1 = rep.pass1_per_token[pass1_token - 1];
    rep.cons_k_k = cfg.cons_k;
    rep.cons_k = eval_consk(model, vocab, eval_set, cfg.cons_k, cfg.cons_sets, n_forking, cfg.gen,
                            derive_seed(cfg.seed, 0x200));
    rep.passk_ks.clear();
    for (int k = 1; k <= cfg.passk_n; k *= 2) rep.passk_ks.push_back(k);
    if (rep.passk_ks.back() != cfg.passk_n) rep.passk_ks.push_back(cfg.passk_n);
    rep.passk = eval_passk_curve(model, vocab, eval_set, cfg.passk_n, rep.passk_ks, n_forking,
                                 cfg.gen, derive_seed(cfg.seed, 0x300));
    if (oracle != nullptr) {
        rep.modes = mode_report(model, vocab, eval_set, n_forking, cfg.mode_reps, cfg.gen, *oracle,
                                derive_seed(cfg.seed, 0x400));
    }
    return rep;
}

void save_eval_report(const std::string& path, const EvalReport& rep) {
    json j;
    j["questions"] = rep.questions;
    j["pass1_per_token"] = rep.pass1_per_token;
    j["pass1_token"] = rep.pass1_token;
    j["pass1"] = rep.pass1;
    j["cons_k"] = rep.cons_k;
    j["cons_k_k"] = rep.cons_k_k;
    j["passk_ks"] = rep.passk_ks;
    j["passk"] = rep.passk;
    json tokens = json::array();
    for (const auto& st : rep.modes.tokens) {
        json t;
        t["fork_index"] = st.fork_index;
        json styles = json::array();
        for (const auto& [s, c] : st.style_counts) styles.push_back({{"style", s}, {"count", c}});
        t["style_counts"] = std::move(styles);
        t["unclassifiable"] = st.unclassifiable;
        t["mean_len"] = st.mean_len;
        t["len_p10"] = st.len_p10;
        t["len_p50"] = st.len_p50;
        t["len_p90"] = st.len_p90;
        t["accuracy"] = st.accuracy;
        tokens.push_back(std::move(t));
    }
    j["modes"] = {{"tokens", std::move(tokens)},
                  {"collapse_mean_tv", rep.modes.collapse_mean_tv},
                  {"collapse_max_tv", rep.modes.collapse_max_tv}};
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f << j.dump(2) << '\n';
}

EvalReport load_eval_report(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    json j = json::parse(f);
    EvalReport rep;
    rep.questions = j.at("questions").get<int>();
    rep.pass1_per_token = j.at("pass1_per_token").get<std::vector<double>>();
    rep.pass1_token = j.at("pass1_token").get<int>();
    rep.pass1 = j.at("pass1").get<double>();
    rep.cons_k = j.at("cons_k").get<double>();
    rep.cons_k_k = j.at("cons_k_k").get<int>();
    rep.passk_ks = j.at("passk_ks").get<std::vector<int>>();
    rep.passk = j.at("passk").get<std::vector<double>>();
    const json& modes = j.at("modes");
    for (const auto& t : modes.at("tokens")) {
        TokenModeStats st;
        st.fork_index = t.at("fork_index").get<int>();
        for (const auto& s : t.at("style_counts")) {
            st.style_counts[s.at("style").get<int>()] = s.at("count").get<long long>();
        }
        st.unclassifiable = t.at("unclassifiable").get<long long>();
        st.mean_len = t.at("mean_len").get<double>();
        st.len_p10 = t.at("len_p10").get<double>();
        st.len_p50 = t.at("len_p50").get<double>();
        st.len_p90 = t.at("len_p90").get<double>();
        st.accuracy = t.at("accuracy").get<double>();
        rep.modes.tokens.push_back(std::move(st));
    }
    rep.modes.collapse_mean_tv = modes.at("collapse_mean_tv").get<double>();
    rep.modes.collapse_max_tv = modes.at("collapse_max_tv").get<double>();
    return rep;
}

}  // namespace setfork
