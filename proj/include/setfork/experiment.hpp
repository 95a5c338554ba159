#pragma once
#include <string>
#include <vector>

#include "setfork/corpus.hpp"
#include "setfork/infer.hpp"
#include "setfork/model.hpp"
#include "setfork/train.hpp"

namespace setfork {

inline constexpr int kSchemaVersion = 1;

// One experiment = corpus + model + training + evaluation under one master
// seed. Module seeds are derived from the master seed, so a stored config
// re-runs to identical outputs.
struct ExperimentConfig {
    CorpusConfig corpus;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
    int eval_questions = 32;
    std::string out_dir = "runs/default";
    uint64_t master_seed = 1;

    void normalize();  // derives module seeds and the model vocab size
    void validate() const;
};

ExperimentConfig default_experiment();

ExperimentConfig experiment_from_json_file(const std::string& path);
void save_experiment(const std::string& path, const ExperimentConfig& cfg);
std::string experiment_config_hash(const ExperimentConfig& cfg);

struct RunOutputs {
    std::string run_dir;
    TrainResult train;
};

// Builds (or loads) the corpus under dir/data.
CorpusBuildResult run_gen_data(const ExperimentConfig& cfg);

// Full training pipeline: corpus, model init, train_run, manifest.
RunOutputs run_train(const ExperimentConfig& cfg, bool verbose = false);

// Evaluates the checkpoint in run_dir; writes eval_report.json there.
EvalReport run_eval_dir(const std::string& run_dir, const ExperimentConfig& cfg);

}  // namespace setfork
