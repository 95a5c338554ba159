#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "setfork/rng.hpp"
#include "setfork/vocab.hpp"

namespace setfork {

enum class TaskFamily { kModularChain, kParity, kDigitSum };

std::string to_string(TaskFamily f);
TaskFamily task_family_from_string(const std::string& s);

// A reasoning style is a deterministic render recipe plus a target length
// multiplier (relative to the compact baseline) and a teacher accuracy knob.
struct StyleSpec {
    int style_id = 0;
    std::string kind;        // verbose-decompose | compact-direct | redundant-restate | digit-flip
    double verbosity = 1.0;  // expected body-length multiplier vs compact baseline
    double p_correct = 1.0;  // probability the answer suffix is correct
};

// One target trace: worked steps, <ans>, answer tokens, <eos>. Deliberately
// carries no style field; style labels live only in the sidecar.
struct TraceRecord {
    std::vector<TokenId> tokens;

    int length() const { return static_cast<int>(tokens.size()); }
    // Tokens before the answer separator (the thinking portion).
    int body_length() const;
    // Concatenated answer symbols after the last <ans>, "" if none.
    std::string answer_string(const Vocab& v) const;
};

// One prompt with an unordered set of parallel target traces.
struct TraceSet {
    int64_t id = 0;
    std::vector<TokenId> prompt;
    std::vector<TraceRecord> traces;
    std::string answer_truth;

    int m() const { return static_cast<int>(traces.size()); }
};

struct QuestionAnswer {
    std::vector<TokenId> prompt;
    std::string answer;
};

// Total over all seeds: the seed indexes the question space directly.
QuestionAnswer gen_question(const Vocab& vocab, TaskFamily family, uint64_t seed);

TraceRecord gen_trace(const Vocab& vocab, TaskFamily family, const QuestionAnswer& qa,
                      const StyleSpec& style, uint64_t seed);

struct CorpusConfig {
    TaskFamily task_family = TaskFamily::kModularChain;
    std::vector<StyleSpec> styles;
    int questions = 100;
    int m_min = 2;
    int m_max = 2;
    // round_robin: traces cycle through styles (exactly one per style when
    // M == #styles); uniform: each trace draws its style independently.
    std::string style_sampling = "round_robin";
    // Trace order carries no semantics either way; false emits the canonical
    // style order (the fixed-teacher-order case-study setup).
    bool shuffle_trace_order = true;
    int n_forking = 4;
    uint64_t seed = 1;
    int oracle_holdout = 200;        // per-style samples for the build-time separability check
    double oracle_min_accuracy = 0.95;

    bool variable_m() const { return m_min != m_max; }
    void validate() const;
};

// Marker-statistics classifier over registered styles. Calibrated once from
// generator samples; classification is deterministic.
class StyleOracle {
public:
    StyleOracle(std::vector<StyleSpec> styles, std::vector<double> mean_body_len);

    static StyleOracle calibrate(const Vocab& vocab, TaskFamily family,
                                 const std::vector<StyleSpec>& styles, int samples_per_style,
                                 uint64_t seed);

    // Throws UnclassifiableError when every style scores the same.
    int classify(const Vocab& vocab, const std::vector<TokenId>& body) const;
    int classify(const Vocab& vocab, const TraceRecord& trace) const;

    const std::vector<StyleSpec>& styles() const { return styles_; }
    const std::vector<double>& mean_body_len() const { return mean_body_len_; }

private:
    std::vector<StyleSpec> styles_;
    std::vector<double> mean_body_len_;
};

struct StyleSidecar {
    // styles[r][j] = style_id of trace j of record r (aligned with dataset order).
    std::vector<std::vector<int>> styles;
};

struct CorpusBuildResult {
    std::vector<TraceSet> records;
    StyleSidecar sidecar;
    StyleOracle oracle;
    double oracle_accuracy = 0.0;
};

// Generates records, verifies style separability, and (when dir is nonempty)
// writes dataset.jsonl, sidecar.jsonl and corpus_meta.json.
CorpusBuildResult build_corpus(const CorpusConfig& cfg, const std::string& dir = "");

void save_dataset(const std::string& path, const std::vector<TraceSet>& records);
std::vector<TraceSet> load_dataset(const std::string& path);
void save_sidecar(const std::string& path, const StyleSidecar& sidecar);
StyleSidecar load_sidecar(const std::string& path);

void save_corpus_meta(const std::string& path, const CorpusConfig& cfg, const StyleOracle& oracle,
                      double oracle_accuracy);
struct CorpusMeta {
    CorpusConfig cfg;
    StyleOracle oracle;
    double oracle_accuracy = 0.0;
};
CorpusMeta load_corpus_meta(const std::string& path);

CorpusConfig corpus_config_from_json_file(const std::string& path);

}  // namespace setfork
