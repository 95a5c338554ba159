#include "setfork/experiment.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "setfork/errors.hpp"

namespace setfork {

using nlohmann::json;
namespace fs = std::filesystem;

void ExperimentConfig::normalize() {
    corpus.seed = derive_seed(master_seed, 1);
    train.seed = derive_seed(master_seed, 2);
    eval.seed = derive_seed(master_seed, 3);
    corpus.n_forking = train.n_forking;
    if (model.vocab_size == 0) model.vocab_size = Vocab(train.n_forking).size();
}

void ExperimentConfig::validate() const {
    corpus.validate();
    model.validate();
    if (eval_questions < 1) throw ConfigError("experiment: eval_questions must be >= 1");
}

ExperimentConfig default_experiment() {
    ExperimentConfig cfg;
    cfg.corpus.task_family = TaskFamily::kModularChain;
    cfg.corpus.styles = {
        {0, "verbose-decompose", 5.0, 1.0},
        {1, "compact-direct", 1.0, 1.0},
    };
    cfg.corpus.questions = 200;
    cfg.corpus.m_min = 2;
    cfg.corpus.m_max = 2;
    cfg.train.n_forking = 4;
    cfg.train.match_len = 64;
    cfg.train.epochs = 6;
    cfg.train.global_batch = 32;
    cfg.train.grad_accum = 32;
    cfg.train.opt.lr = 1e-3;
    cfg.model.d_model = 128;
    cfg.model.n_layers = 4;
    cfg.model.n_heads = 4;
    cfg.model.d_ff = 512;
    cfg.model.context_len = 512;
    cfg.normalize();
    return cfg;
}

namespace {

json model_to_json(const ModelConfig& m) {
    return json{{"d_model", m.d_model},       {"n_layers", m.n_layers},
                {"n_heads", m.n_heads},       {"d_ff", m.d_ff},
                {"context_len", m.context_len}, {"vocab_size", m.vocab_size},
                {"init_scale", m.init_scale}, {"fork_tag_len", m.fork_tag_len}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.d_model = j.value("d_model", m.d_model);
    m.n_layers = j.value("n_layers", m.n_layers);
    m.n_heads = j.value("n_heads", m.n_heads);
    m.d_ff = j.value("d_ff", m.d_ff);
    m.context_len = j.value("context_len", m.context_len);
    m.vocab_size = j.value("vocab_size", 0);
    m.init_scale = j.value("init_scale", m.init_scale);
    m.fork_tag_len = j.value("fork_tag_len", m.fork_tag_len);
    return m;
}

json train_to_json(const TrainConfig& t) {
    return json{{"matching_mode", to_string(t.matching_mode)},
                {"n_forking", t.n_forking},
                {"match_len", t.match_len},
                {"epochs", t.epochs},
                {"global_batch", t.global_batch},
                {"grad_accum", t.grad_accum},
                {"lr", t.opt.lr},
                {"beta1", t.opt.beta1},
                {"beta2", t.opt.beta2},
                {"weight_decay", t.opt.weight_decay},
                {"warmup_frac", t.opt.warmup_frac},
                {"total_steps", t.opt.total_steps},
                {"normalize_by_m", t.normalize_by_m},
                {"batched_cost_matrix", t.batched_cost_matrix},
                {"use_queue_batching", t.use_queue_batching},
                {"ranks", t.ranks},
                {"rank_batch", t.rank_batch},
                {"sigma_p_threshold", t.sigma_p_threshold},
                {"sigma_p_window_epochs", t.sigma_p_window_epochs}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    t.matching_mode = matching_mode_from_string(j.value("matching_mode", std::string("optimal")));
    t.n_forking = j.value("n_forking", t.n_forking);
    t.match_len = j.value("match_len", t.match_len);
    t.epochs = j.value("epochs", t.epochs);
    t.global_batch = j.value("global_batch", t.global_batch);
    t.grad_accum = j.value("grad_accum", t.grad_accum);
    t.opt.lr = j.value("lr", t.opt.lr);
    t.opt.beta1 = j.value("beta1", t.opt.beta1);
    t.opt.beta2 = j.value("beta2", t.opt.beta2);
    t.opt.weight_decay = j.value("weight_decay", t.opt.weight_decay);
    t.opt.warmup_frac = j.value("warmup_frac", t.opt.warmup_frac);
    t.opt.total_steps = j.value("total_steps", 0L);
    t.normalize_by_m = j.value("normalize_by_m", t.normalize_by_m);
    t.batched_cost_matrix = j.value("batched_cost_matrix", t.batched_cost_matrix);
    t.use_queue_batching = j.value("use_queue_batching", t.use_queue_batching);
    t.ranks = j.value("ranks", t.ranks);
    t.rank_batch = j.value("rank_batch", t.rank_batch);
    t.sigma_p_threshold = j.value("sigma_p_threshold", t.sigma_p_threshold);
    t.sigma_p_window_epochs = j.value("sigma_p_window_epochs", t.sigma_p_window_epochs);
    return t;
}

json eval_to_json(const EvalConfig& e) {
    return json{{"cons_k", e.cons_k},         {"cons_sets", e.cons_sets},
                {"pass1_reps", e.pass1_reps}, {"passk_n", e.passk_n},
                {"mode_reps", e.mode_reps},   {"temperature", e.gen.temperature},
                {"top_p", e.gen.top_p},       {"max_new", e.gen.max_new}};
}

EvalConfig eval_from_json(const json& j) {
    EvalConfig e;
    e.cons_k = j.value("cons_k", e.cons_k);
    e.cons_sets = j.value("cons_sets", e.cons_sets);
    e.pass1_reps = j.value("pass1_reps", e.pass1_reps);
    e.passk_n = j.value("passk_n", e.passk_n);
    e.mode_reps = j.value("mode_reps", e.mode_reps);
    e.gen.temperature = j.value("temperature", e.gen.temperature);
    e.gen.top_p = j.value("top_p", e.gen.top_p);
    e.gen.max_new = j.value("max_new", e.gen.max_new);
    return e;
}

json corpus_to_json_cfg(const CorpusConfig& c) {
    json styles = json::array();
    for (const auto& s : c.styles) {
        styles.push_back({{"style_id", s.style_id},
                          {"kind", s.kind},
                          {"verbosity", s.verbosity},
                          {"p_correct", s.p_correct}});
    }
    return json{{"task_family", to_string(c.task_family)},
                {"styles", styles},
                {"questions", c.questions},
                {"m_min", c.m_min},
                {"m_max", c.m_max},
                {"style_sampling", c.style_sampling},
                {"shuffle_trace_order", c.shuffle_trace_order},
                {"oracle_holdout", c.oracle_holdout},
                {"oracle_min_accuracy", c.oracle_min_accuracy}};
}

CorpusConfig corpus_from_json_cfg(const json& j) {
    CorpusConfig c;
    c.task_family = task_family_from_string(j.value("task_family", to_string(c.task_family)));
    if (j.contains("styles")) {
        c.styles.clear();
        for (const auto& sj : j.at("styles")) {
            StyleSpec s;
            s.style_id = sj.at("style_id").get<int>();
            s.kind = sj.at("kind").get<std::string>();
            s.verbosity = sj.value("verbosity", 1.0);
            s.p_correct = sj.value("p_correct", 1.0);
            c.styles.push_back(s);
        }
    }
    c.questions = j.value("questions", c.questions);
    c.m_min = j.value("m_min", c.m_min);
    c.m_max = j.value("m_max", c.m_max);
    c.style_sampling = j.value("style_sampling", c.style_sampling);
    c.shuffle_trace_order = j.value("shuffle_trace_order", c.shuffle_trace_order);
    c.oracle_holdout = j.value("oracle_holdout", c.oracle_holdout);
    c.oracle_min_accuracy = j.value("oracle_min_accuracy", c.oracle_min_accuracy);
    return c;
}

}  // namespace

ExperimentConfig experiment_from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    json j = json::parse(f);
    const int schema = j.value("schema_version", kSchemaVersion);
    if (schema != kSchemaVersion) {
        throw SchemaMismatchError("experiment config schema " + std::to_string(schema) +
                                  " unsupported (expected " + std::to_string(kSchemaVersion) + ")");
    }
    ExperimentConfig cfg = default_experiment();
    if (j.contains("corpus")) cfg.corpus = corpus_from_json_cfg(j.at("corpus"));
    if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
    if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
    if (j.contains("eval")) cfg.eval = eval_from_json(j.at("eval"));
    cfg.eval_questions = j.value("eval_questions", cfg.eval_questions);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.master_seed = j.value("master_seed", cfg.master_seed);
    cfg.normalize();
    return cfg;
}

void save_experiment(const std::string& path, const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["corpus"] = corpus_to_json_cfg(cfg.corpus);
    j["model"] = model_to_json(cfg.model);
    j["train"] = train_to_json(cfg.train);
    j["eval"] = eval_to_json(cfg.eval);
    j["eval_questions"] = cfg.eval_questions;
    j["out_dir"] = cfg.out_dir;
    j["master_seed"] = cfg.master_seed;
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f << j.dump(2) << '\n';
}

std::string experiment_config_hash(const ExperimentConfig& cfg) {
    json j;
    j["corpus"] = corpus_to_json_cfg(cfg.corpus);
    j["model"] = model_to_json(cfg.model);
    j["train"] = train_to_json(cfg.train);
    j["eval"] = eval_to_json(cfg.eval);
    j["eval_questions"] = cfg.eval_questions;
    j["master_seed"] = cfg.master_seed;
    const std::string s = j.dump();
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

CorpusBuildResult run_gen_data(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.normalize();
    cfg.validate();
    return build_corpus(cfg.corpus, cfg.out_dir + "/data");
}

namespace {

void write_manifest(const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["config_hash"] = experiment_config_hash(cfg);
    j["matching_mode"] = to_string(cfg.train.matching_mode);
    j["master_seed"] = cfg.master_seed;
    std::ofstream f(cfg.out_dir + "/manifest.json");
    if (!f) throw IoError("cannot open for write: " + cfg.out_dir + "/manifest.json");
    f << j.dump(2) << '\n';
}

std::vector<TraceSet> ensure_corpus(const ExperimentConfig& cfg) {
    const std::string data = cfg.out_dir + "/data/dataset.jsonl";
    if (fs::exists(data)) return load_dataset(data);
    return run_gen_data(cfg).records;
}

}  // namespace

RunOutputs run_train(const ExperimentConfig& cfg_in, bool verbose) {
    ExperimentConfig cfg = cfg_in;
    cfg.normalize();
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    save_experiment(cfg.out_dir + "/config.json", cfg);
    write_manifest(cfg);

    const std::vector<TraceSet> corpus = ensure_corpus(cfg);
    Model model(cfg.model, derive_seed(cfg.master_seed, 4));
    RunOutputs out;
    out.run_dir = cfg.out_dir;
    out.train = train_run(model, corpus, cfg.train, cfg.out_dir, verbose);
    return out;
}

EvalReport run_eval_dir(const std::string& run_dir, const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.normalize();
    Model model = Model::load(run_dir + "/checkpoint.bin");
    Vocab vocab(cfg.train.n_forking);

    std::vector<TraceSet> records = load_dataset(run_dir + "/data/dataset.jsonl");
    if (static_cast<int>(records.size()) > cfg.eval_questions) {
        records.resize(cfg.eval_questions);
    }

    int pass1_token = 1;
    if (fs::exists(run_dir + "/learned_matching.json")) {
        pass1_token = load_learned_matching(run_dir + "/learned_matching.json").i_star;
    }

    const CorpusMeta meta = load_corpus_meta(run_dir + "/data/corpus_meta.json");
    const EvalReport rep = run_eval(model, vocab, records, cfg.train.n_forking, pass1_token,
                                    &meta.oracle, cfg.eval);
    save_eval_report(run_dir + "/eval_report.json", rep);
    return rep;
}

}  // namespace setfork
