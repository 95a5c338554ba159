#include "setfork/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "setfork/errors.hpp"

namespace setfork {

using nlohmann::json;

std::string to_string(TaskFamily f) {
    switch (f) {
        case TaskFamily::kModularChain: return "modular-arithmetic-chain";
        case TaskFamily::kParity: return "parity-of-expression";
        case TaskFamily::kDigitSum: return "sorted-digit-sum";
    }
    throw ConfigError("unknown task family");
}

TaskFamily task_family_from_string(const std::string& s) {
    if (s == "modular-arithmetic-chain") return TaskFamily::kModularChain;
    if (s == "parity-of-expression") return TaskFamily::kParity;
    if (s == "sorted-digit-sum") return TaskFamily::kDigitSum;
    throw ConfigError("unknown task family: " + s);
}

int TraceRecord::body_length() const {
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == Vocab::kAnswerSep) return static_cast<int>(i);
    }
    return length();
}

std::string TraceRecord::answer_string(const Vocab& v) const {
    int sep = -1;
    for (int i = 0; i < length(); ++i) {
        if (tokens[i] == Vocab::kAnswerSep) sep = i;
    }
    if (sep < 0) return "";
    std::string out;
    for (int i = sep + 1; i < length(); ++i) {
        if (tokens[i] == Vocab::kEos) break;
        out += v.symbol(tokens[i]);
    }
    return out;
}

namespace {

// Base-10 digits of the seed, least significant first.
int seed_digit(uint64_t seed, int pos) {
    for (int i = 0; i < pos; ++i) seed /= 10;
    return static_cast<int>(seed % 10);
}

std::vector<std::string> value_symbols(long long v) {
    std::string s = std::to_string(v);
    std::vector<std::string> out;
    for (char c : s) out.emplace_back(1, c);
    return out;
}

struct Step {
    std::vector<std::string> lhs;  // symbols left of '='
    std::string result;            // concatenated result symbols
};

std::vector<std::string> result_symbols(const std::string& result) {
    if (result == "odd" || result == "even") return {result};
    std::vector<std::string> out;
    for (char c : result) out.emplace_back(1, c);
    return out;
}

long long apply_op(long long a, const std::string& op, long long b) {
    return op == "+" ? a + b : a * b;
}

// Parses a prompt back into worked steps; the last step's result is the answer.
std::vector<Step> solve_prompt(const Vocab& v, TaskFamily family, const std::vector<TokenId>& prompt) {
    std::vector<std::string> sym;
    for (TokenId t : prompt) {
        if (t == Vocab::kBos) continue;
        sym.push_back(v.symbol(t));
    }
    auto num = [](const std::string& s) { return static_cast<long long>(std::stoll(s)); };
    std::vector<Step> steps;
    if (family == TaskFamily::kModularChain) {
        // Q: ( ( a op1 b ) op2 c ) mod m =
        if (sym.size() != 13 || sym[0] != "Q:") throw RunError("corpus: malformed modular prompt");
        long long a = num(sym[3]), b = num(sym[5]), c = num(sym[8]), m = num(sym[11]);
        const std::string op1 = sym[4], op2 = sym[7];
        long long v1 = apply_op(a, op1, b);
        long long v2 = apply_op(v1, op2, c);
        long long ans = v2 % m;
        steps.push_back({{sym[3], op1, sym[5]}, std::to_string(v1)});
        Step s2;
        s2.lhs = value_symbols(v1);
        s2.lhs.push_back(op2);
        s2.lhs.push_back(sym[8]);
        s2.result = std::to_string(v2);
        steps.push_back(s2);
        Step s3;
        s3.lhs = value_symbols(v2);
        s3.lhs.push_back("mod");
        s3.lhs.push_back(sym[11]);
        s3.result = std::to_string(ans);
        steps.push_back(s3);
    } else if (family == TaskFamily::kParity) {
        // Q: a + b =
        if (sym.size() != 5 || sym[0] != "Q:") throw RunError("corpus: malformed parity prompt");
        long long a = num(sym[1]), b = num(sym[3]);
        long long s = a + b;
        steps.push_back({{sym[1], "+", sym[3]}, std::to_string(s)});
        Step s2;
        s2.lhs = value_symbols(s);
        s2.result = (s % 2 == 0) ? "even" : "odd";
        steps.push_back(s2);
    } else {
        // Q: digitsum p q r =
        if (sym.size() != 6 || sym[1] != "digitsum") throw RunError("corpus: malformed digitsum prompt");
        long long p = num(sym[2]), q = num(sym[3]), r = num(sym[4]);
        std::vector<long long> d = {p, q, r};
        std::sort(d.begin(), d.end());
        Step s1;
        s1.lhs = {"sort", sym[2], sym[3], sym[4]};
        s1.result = std::to_string(d[0]) + std::to_string(d[1]) + std::to_string(d[2]);
        steps.push_back(s1);
        long long v1 = d[0] + d[1];
        steps.push_back({{std::to_string(d[0]), "+", std::to_string(d[1])}, std::to_string(v1)});
        Step s3;
        s3.lhs = value_symbols(v1);
        s3.lhs.push_back("+");
        s3.lhs.push_back(std::to_string(d[2]));
        s3.result = std::to_string(v1 + d[2]);
        steps.push_back(s3);
    }
    return steps;
}

std::string marker_for_kind(const std::string& kind) {
    if (kind == "verbose-decompose") return "step";
    if (kind == "compact-direct") return "";
    if (kind == "redundant-restate") return "so";
    if (kind == "digit-flip") return "flip";
    throw ConfigError("unknown style kind: " + kind);
}

void append_symbols(std::vector<TokenId>& out, const Vocab& v, const std::vector<std::string>& sym) {
    for (const auto& s : sym) out.push_back(v.id(s));
}

void append_step(std::vector<TokenId>& out, const Vocab& v, const Step& st) {
    append_symbols(out, v, st.lhs);
    out.push_back(v.id("="));
    append_symbols(out, v, result_symbols(st.result));
}

// Style bodies (thinking portion, before <ans>).
std::vector<TokenId> render_body(const Vocab& v, const std::string& kind,
                                 const std::vector<Step>& steps,
                                 const std::vector<TokenId>& prompt) {
    std::vector<TokenId> body;
    const TokenId semi = v.id(";");
    if (kind == "compact-direct") {
        append_step(body, v, steps.back());
    } else if (kind == "verbose-decompose") {
        for (size_t i = 0; i < steps.size(); ++i) {
            if (i) body.push_back(semi);
            body.push_back(v.id("step"));
            append_step(body, v, steps[i]);
        }
    } else if (kind == "redundant-restate") {
        // Restate the question payload, then the final step with the result
        // said twice.
        for (TokenId t : prompt) {
            if (t == Vocab::kBos || t == v.id("Q:") || t == v.id("=")) continue;
            body.push_back(t);
        }
        body.push_back(semi);
        append_step(body, v, steps.back());
        const auto res = result_symbols(steps.back().result);
        body.push_back(v.id("so"));
        append_symbols(body, v, res);
        body.push_back(v.id("so"));
        append_symbols(body, v, res);
    } else if (kind == "digit-flip") {
        const Step& st = steps.back();
        append_step(body, v, st);
        body.push_back(v.id("flip"));
        auto res = result_symbols(st.result);
        std::reverse(res.begin(), res.end());
        append_symbols(body, v, res);
    } else {
        throw ConfigError("unknown style kind: " + kind);
    }
    return body;
}

std::string corrupt_answer(const std::string& answer, Rng& rng) {
    if (answer == "odd") return "even";
    if (answer == "even") return "odd";
    std::string out = answer;
    int d = out.back() - '0';
    out.back() = static_cast<char>('0' + (d + 1 + rng.uniform_int(0, 7)) % 10);
    return out;
}

}  // namespace

QuestionAnswer gen_question(const Vocab& vocab, TaskFamily family, uint64_t seed) {
    QuestionAnswer qa;
    auto d = [&](int pos) { return seed_digit(seed, pos); };
    std::string text;
    if (family == TaskFamily::kModularChain) {
        int a = 1 + (2 + d(0)) % 9;
        std::string op1 = d(1) % 2 == 0 ? "+" : "*";
        int b = 1 + (4 + d(2)) % 9;
        std::string op2 = d(3) % 2 == 0 ? "*" : "+";
        int c = 1 + (1 + d(4)) % 9;
        int m = 3 + (4 + d(5)) % 7;
        text = "Q: ( ( " + std::to_string(a) + " " + op1 + " " + std::to_string(b) + " ) " + op2 +
               " " + std::to_string(c) + " ) mod " + std::to_string(m) + " =";
        long long v2 = apply_op(apply_op(a, op1, b), op2, c);
        qa.answer = std::to_string(v2 % m);
    } else if (family == TaskFamily::kParity) {
        int a = (6 + d(0)) % 10;
        int b = (6 + d(1)) % 10;
        text = "Q: " + std::to_string(a) + " + " + std::to_string(b) + " =";
        qa.answer = (a + b) % 2 == 0 ? "even" : "odd";
    } else {
        int p = d(0), q = d(1), r = d(2);
        text = "Q: digitsum " + std::to_string(p) + " " + std::to_string(q) + " " +
               std::to_string(r) + " =";
        qa.answer = std::to_string(p + q + r);
    }
    qa.prompt.push_back(Vocab::kBos);
    auto toks = vocab.encode(text);
    qa.prompt.insert(qa.prompt.end(), toks.begin(), toks.end());
    return qa;
}

TraceRecord gen_trace(const Vocab& vocab, TaskFamily family, const QuestionAnswer& qa,
                      const StyleSpec& style, uint64_t seed) {
    Rng rng(derive_seed(seed, 0x7ace));
    auto steps = solve_prompt(vocab, family, qa.prompt);
    std::vector<TokenId> body = render_body(vocab, style.kind, steps, qa.prompt);

    // Pad toward verbosity * compact-baseline with filler tokens. The jitter
    // is a style-owned length distribution: it cannot be predicted from the
    // prompt, which is what lets a forking token bind to the style globally.
    std::vector<TokenId> baseline;
    append_step(baseline, vocab, steps.back());
    double jitter = 0.8 + 0.4 * rng.uniform();
    int target = static_cast<int>(std::lround(style.verbosity * static_cast<double>(baseline.size()) * jitter));
    const TokenId fill = vocab.id("fill");
    while (static_cast<int>(body.size()) < target) body.push_back(fill);

    std::string answer = steps.back().result;
    if (style.p_correct < 1.0 && rng.uniform() >= style.p_correct) {
        answer = corrupt_answer(answer, rng);
    }

    TraceRecord rec;
    rec.tokens = std::move(body);
    rec.tokens.push_back(Vocab::kAnswerSep);
    append_symbols(rec.tokens, vocab, result_symbols(answer));
    rec.tokens.push_back(Vocab::kEos);
    return rec;
}

void CorpusConfig::validate() const {
    if (styles.size() < 2) throw ConfigError("corpus: at least 2 styles required");
    if (questions < 1) throw ConfigError("corpus: questions_count must be >= 1");
    if (m_min < 1 || m_min > m_max) throw ConfigError("corpus: invalid M range");
    if (m_max > n_forking) throw ConfigError("corpus: M > N (more traces than forking tokens)");
    if (style_sampling != "round_robin" && style_sampling != "uniform") {
        throw ConfigError("corpus: unknown style_sampling " + style_sampling);
    }
    std::set<int> ids;
    std::set<std::string> kinds;
    for (const auto& s : styles) {
        if (!ids.insert(s.style_id).second) throw ConfigError("corpus: duplicate style_id");
        if (!kinds.insert(s.kind).second) throw ConfigError("corpus: duplicate style kind");
        marker_for_kind(s.kind);  // validates the kind
        if (s.verbosity < 1.0) throw ConfigError("corpus: verbosity must be >= 1");
        if (s.p_correct < 0.0 || s.p_correct > 1.0) throw ConfigError("corpus: bad p_correct");
    }
}

StyleOracle::StyleOracle(std::vector<StyleSpec> styles, std::vector<double> mean_body_len)
    : styles_(std::move(styles)), mean_body_len_(std::move(mean_body_len)) {
    if (styles_.size() != mean_body_len_.size()) throw ConfigError("oracle: calibration size mismatch");
}

StyleOracle StyleOracle::calibrate(const Vocab& vocab, TaskFamily family,
                                   const std::vector<StyleSpec>& styles, int samples_per_style,
                                   uint64_t seed) {
    std::vector<double> means(styles.size(), 0.0);
    for (size_t s = 0; s < styles.size(); ++s) {
        double total = 0.0;
        for (int k = 0; k < samples_per_style; ++k) {
            uint64_t qseed = derive_seed(seed, 0xca11b000ULL + s * samples_per_style + k);
            auto qa = gen_question(vocab, family, qseed);
            auto tr = gen_trace(vocab, family, qa, styles[s], derive_seed(qseed, 17));
            total += tr.body_length();
        }
        means[s] = total / samples_per_style;
    }
    return StyleOracle(styles, means);
}

int StyleOracle::classify(const Vocab& vocab, const std::vector<TokenId>& body) const {
    if (body.empty()) throw UnclassifiableError("oracle: empty trace");
    std::vector<int> marker_count(styles_.size(), 0);
    for (size_t s = 0; s < styles_.size(); ++s) {
        const std::string marker = marker_for_kind(styles_[s].kind);
        if (marker.empty() || !vocab.has(marker)) continue;
        const TokenId mt = vocab.id(marker);
        for (TokenId t : body) {
            if (t == mt) ++marker_count[s];
        }
    }
    int best = -1;
    bool unique = false;
    for (size_t s = 0; s < styles_.size(); ++s) {
        if (best < 0 || marker_count[s] > marker_count[best]) {
            best = static_cast<int>(s);
            unique = true;
        } else if (marker_count[s] == marker_count[best]) {
            unique = false;
        }
    }
    if (marker_count[best] > 0 && unique) return styles_[best].style_id;

    // No marker separates the candidates; fall back to nearest mean length.
    double len = static_cast<double>(body.size());
    int arg = -1;
    bool len_unique = false;
    for (size_t s = 0; s < styles_.size(); ++s) {
        if (marker_count[s] != marker_count[best]) continue;  // markers already ruled these out
        double dist = std::abs(len - mean_body_len_[s]);
        if (arg < 0 || dist < std::abs(len - mean_body_len_[arg]) - 1e-12) {
            arg = static_cast<int>(s);
            len_unique = true;
        } else if (std::abs(dist - std::abs(len - mean_body_len_[arg])) <= 1e-12) {
            len_unique = false;
        }
    }
    if (arg < 0 || !len_unique) throw UnclassifiableError("oracle: all style scores tie");
    return styles_[arg].style_id;
}

int StyleOracle::classify(const Vocab& vocab, const TraceRecord& trace) const {
    std::vector<TokenId> body(trace.tokens.begin(), trace.tokens.begin() + trace.body_length());
    return classify(vocab, body);
}

CorpusBuildResult build_corpus(const CorpusConfig& cfg, const std::string& dir) {
    cfg.validate();
    Vocab vocab(cfg.n_forking);
    const int n_styles = static_cast<int>(cfg.styles.size());

    StyleOracle oracle = StyleOracle::calibrate(vocab, cfg.task_family, cfg.styles,
                                                std::max(50, cfg.oracle_holdout / 2),
                                                derive_seed(cfg.seed, 0x0c0de));

    // Held-out separability check: fresh samples, generator labels as truth.
    long long correct = 0, total = 0;
    for (int s = 0; s < n_styles; ++s) {
        for (int k = 0; k < cfg.oracle_holdout; ++k) {
            uint64_t qseed = derive_seed(cfg.seed, 0xb01d000ULL + s * cfg.oracle_holdout + k);
            auto qa = gen_question(vocab, cfg.task_family, qseed);
            auto tr = gen_trace(vocab, cfg.task_family, qa, cfg.styles[s], derive_seed(qseed, 23));
            ++total;
            try {
                if (oracle.classify(vocab, tr) == cfg.styles[s].style_id) ++correct;
            } catch (const UnclassifiableError&) {
            }
        }
    }
    const double accuracy = static_cast<double>(correct) / static_cast<double>(total);
    if (accuracy < cfg.oracle_min_accuracy) {
        throw ConfigError("corpus: styles not separable, oracle accuracy " + std::to_string(accuracy));
    }

    CorpusBuildResult out{{}, {}, oracle, accuracy};
    for (int q = 0; q < cfg.questions; ++q) {
        Rng rec_rng(derive_seed(cfg.seed, 0x4ec000ULL + q));
        uint64_t qseed = rec_rng.next_u64();
        auto qa = gen_question(vocab, cfg.task_family, qseed);

        int m = cfg.m_min == cfg.m_max
                    ? cfg.m_min
                    : static_cast<int>(rec_rng.uniform_int(cfg.m_min, cfg.m_max));
        std::vector<int> style_idx(m);
        for (int j = 0; j < m; ++j) {
            style_idx[j] = cfg.style_sampling == "round_robin"
                               ? j % n_styles
                               : static_cast<int>(rec_rng.uniform_int(0, n_styles - 1));
        }
        // Trace order carries no semantics; shuffling keeps it from leaking
        // style. The case-study configs disable it for a fixed source order.
        if (cfg.shuffle_trace_order) {
            for (int j = m - 1; j > 0; --j) {
                std::swap(style_idx[j], style_idx[rec_rng.uniform_int(0, j)]);
            }
        }

        TraceSet ts;
        ts.id = q;
        ts.prompt = qa.prompt;
        ts.answer_truth = qa.answer;
        std::vector<int> labels;
        for (int j = 0; j < m; ++j) {
            const StyleSpec& st = cfg.styles[style_idx[j]];
            ts.traces.push_back(gen_trace(vocab, cfg.task_family, qa, st, rec_rng.next_u64()));
            labels.push_back(st.style_id);
        }
        out.records.push_back(std::move(ts));
        out.sidecar.styles.push_back(std::move(labels));
    }

    if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        save_dataset(dir + "/dataset.jsonl", out.records);
        save_sidecar(dir + "/sidecar.jsonl", out.sidecar);
        save_corpus_meta(dir + "/corpus_meta.json", cfg, out.oracle, out.oracle_accuracy);
    }
    return out;
}

namespace {

void validate_record(const TraceSet& ts) {
    if (ts.traces.empty()) throw IoError("dataset: record without traces");
    for (const auto& tr : ts.traces) {
        if (tr.length() < 2) throw IoError("dataset: trace shorter than 2 tokens");
        int seps = 0;
        for (TokenId t : tr.tokens) {
            if (t == Vocab::kAnswerSep) ++seps;
            if (t == Vocab::kPad) throw IoError("dataset: PAD inside a trace");
        }
        if (seps != 1) throw IoError("dataset: trace must contain exactly one <ans>");
        if (tr.tokens.back() != Vocab::kEos) throw IoError("dataset: trace must end with <eos>");
        if (tr.tokens[tr.length() - 2] == Vocab::kAnswerSep) throw IoError("dataset: empty answer suffix");
    }
    for (TokenId t : ts.prompt) {
        if (t == Vocab::kPad) throw IoError("dataset: PAD inside a prompt");
    }
}

}  // namespace

void save_dataset(const std::string& path, const std::vector<TraceSet>& records) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    for (const auto& ts : records) {
        validate_record(ts);
        json j;
        j["id"] = ts.id;
        j["prompt"] = ts.prompt;
        json traces = json::array();
        for (const auto& tr : ts.traces) traces.push_back(tr.tokens);
        j["traces"] = std::move(traces);
        j["answer"] = ts.answer_truth;
        f << j.dump() << '\n';
    }
    if (!f) throw IoError("write failed: " + path);
}

std::vector<TraceSet> load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<TraceSet> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        TraceSet ts;
        ts.id = j.at("id").get<int64_t>();
        ts.prompt = j.at("prompt").get<std::vector<TokenId>>();
        for (const auto& arr : j.at("traces")) {
            TraceRecord tr;
            tr.tokens = arr.get<std::vector<TokenId>>();
            ts.traces.push_back(std::move(tr));
        }
        ts.answer_truth = j.at("answer").get<std::string>();
        validate_record(ts);
        out.push_back(std::move(ts));
    }
    return out;
}

void save_sidecar(const std::string& path, const StyleSidecar& sidecar) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    for (size_t r = 0; r < sidecar.styles.size(); ++r) {
        json j;
        j["id"] = r;
        j["styles"] = sidecar.styles[r];
        f << j.dump() << '\n';
    }
}

StyleSidecar load_sidecar(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    StyleSidecar out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        size_t id = j.at("id").get<size_t>();
        if (id != out.styles.size()) throw IoError("sidecar: non-sequential record ids");
        out.styles.push_back(j.at("styles").get<std::vector<int>>());
    }
    return out;
}

namespace {

json style_to_json(const StyleSpec& s) {
    return json{{"style_id", s.style_id},
                {"kind", s.kind},
                {"verbosity", s.verbosity},
                {"p_correct", s.p_correct}};
}

StyleSpec style_from_json(const json& j) {
    StyleSpec s;
    s.style_id = j.at("style_id").get<int>();
    s.kind = j.at("kind").get<std::string>();
    s.verbosity = j.at("verbosity").get<double>();
    s.p_correct = j.value("p_correct", 1.0);
    return s;
}

json corpus_cfg_to_json(const CorpusConfig& cfg) {
    json j;
    j["task_family"] = to_string(cfg.task_family);
    j["styles"] = json::array();
    for (const auto& s : cfg.styles) j["styles"].push_back(style_to_json(s));
    j["questions"] = cfg.questions;
    j["m_min"] = cfg.m_min;
    j["m_max"] = cfg.m_max;
    j["style_sampling"] = cfg.style_sampling;
    j["shuffle_trace_order"] = cfg.shuffle_trace_order;
    j["n_forking"] = cfg.n_forking;
    j["seed"] = cfg.seed;
    j["oracle_holdout"] = cfg.oracle_holdout;
    j["oracle_min_accuracy"] = cfg.oracle_min_accuracy;
    return j;
}

CorpusConfig corpus_cfg_from_json(const json& j) {
    CorpusConfig cfg;
    cfg.task_family = task_family_from_string(j.at("task_family").get<std::string>());
    for (const auto& sj : j.at("styles")) cfg.styles.push_back(style_from_json(sj));
    cfg.questions = j.at("questions").get<int>();
    cfg.m_min = j.at("m_min").get<int>();
    cfg.m_max = j.at("m_max").get<int>();
    cfg.style_sampling = j.value("style_sampling", std::string("round_robin"));
    cfg.shuffle_trace_order = j.value("shuffle_trace_order", true);
    cfg.n_forking = j.at("n_forking").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.oracle_holdout = j.value("oracle_holdout", 200);
    cfg.oracle_min_accuracy = j.value("oracle_min_accuracy", 0.95);
    return cfg;
}

}  // namespace

void save_corpus_meta(const std::string& path, const CorpusConfig& cfg, const StyleOracle& oracle,
                      double oracle_accuracy) {
    json j;
    j["config"] = corpus_cfg_to_json(cfg);
    j["oracle_mean_body_len"] = oracle.mean_body_len();
    j["oracle_accuracy"] = oracle_accuracy;
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f << j.dump(2) << '\n';
}

CorpusMeta load_corpus_meta(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    json j = json::parse(f);
    CorpusConfig cfg = corpus_cfg_from_json(j.at("config"));
    StyleOracle oracle(cfg.styles, j.at("oracle_mean_body_len").get<std::vector<double>>());
    return CorpusMeta{cfg, oracle, j.at("oracle_accuracy").get<double>()};
}

CorpusConfig corpus_config_from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    json j = json::parse(f);
    return corpus_cfg_from_json(j);
}

}  // namespace setfork
