// Experiment front door: corpus generation, SSFT/SFT training, evaluation,
// and report emission. See README for the workflow.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "setfork/errors.hpp"
#include "setfork/experiment.hpp"
#include "setfork/report.hpp"

namespace fs = std::filesystem;
using namespace setfork;

namespace {

// Output root comes from SETFORK_OUT_ROOT when the configured directory is
// relative.
std::string resolve_out(const std::string& dir) {
    if (dir.empty() || fs::path(dir).is_absolute()) return dir;
    const char* root = std::getenv("SETFORK_OUT_ROOT");
    if (root == nullptr || *root == '\0') return dir;
    return (fs::path(root) / dir).string();
}

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool has_seed = false;
    std::string matching;
    int ranks = 0;
    int b = 0;
    int tl = 0;
    int n_fork = 0;
};

ExperimentConfig load_config(const CommonFlags& fl) {
    ExperimentConfig cfg =
        fl.config_path.empty() ? default_experiment() : experiment_from_json_file(fl.config_path);
    if (!fl.out_dir.empty()) cfg.out_dir = fl.out_dir;
    if (fl.has_seed) cfg.master_seed = fl.seed;
    if (!fl.matching.empty()) cfg.train.matching_mode = matching_mode_from_string(fl.matching);
    if (fl.ranks > 0) {
        cfg.train.ranks = fl.ranks;
        cfg.train.use_queue_batching = fl.ranks > 1 || cfg.train.use_queue_batching;
    }
    if (fl.b > 0) cfg.train.rank_batch = fl.b;
    if (fl.tl > 0) cfg.train.match_len = fl.tl;
    if (fl.n_fork > 0) cfg.train.n_forking = fl.n_fork;
    cfg.out_dir = resolve_out(cfg.out_dir);
    cfg.normalize();
    return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& fl) {
    cmd->add_option("--config", fl.config_path, "experiment config JSON");
    cmd->add_option("--out", fl.out_dir, "output run directory");
    cmd->add_option("--seed", fl.seed, "master seed")->each([&](const std::string&) {
        fl.has_seed = true;
    });
    cmd->add_option("--matching", fl.matching, "optimal|random|sft-single|sft-flatten")
        ->check(CLI::IsMember({"optimal", "random", "sft-single", "sft-flatten", "sft_single",
                               "sft_flatten"}));
    cmd->add_option("--ranks", fl.ranks, "virtual ranks for queue batching");
    cmd->add_option("--b", fl.b, "per-rank sequences per step");
    cmd->add_option("--tl", fl.tl, "matching-cost truncation length T_L");
    cmd->add_option("--n-fork", fl.n_fork, "number of reserved forking tokens N");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"setfork: set-supervised fine-tuning lab for global forking tokens"};
    app.require_subcommand(1);

    CommonFlags gen_fl, train_fl, eval_fl;
    bool train_verbose = false;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic multi-style corpus");
    add_common(gen, gen_fl);

    CLI::App* train = app.add_subcommand("train", "train a model (SSFT or SFT baselines)");
    add_common(train, train_fl);
    train->add_flag("--verbose", train_verbose, "per-epoch progress on stderr");

    std::string eval_run;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a finished run directory");
    add_common(eval, eval_fl);
    eval->add_option("--run", eval_run, "run directory (defaults to --out / config out_dir)");

    std::string report_run;
    CLI::App* report = app.add_subcommand("report", "emit plot tables and figures for a run");
    report->add_option("--run", report_run, "run directory")->required();

    std::vector<std::string> compare_dirs;
    std::string compare_out;
    CLI::App* compare = app.add_subcommand("compare", "side-by-side metric table for runs");
    compare->add_option("dirs", compare_dirs, "run directories")->required()->expected(-1);
    compare->add_option("--out", compare_out, "also write the table to this file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const ExperimentConfig cfg = load_config(gen_fl);
            cfg.validate();
            const auto built = run_gen_data(cfg);
            std::cout << "wrote " << built.records.size() << " records to " << cfg.out_dir
                      << "/data (oracle accuracy " << built.oracle_accuracy << ")\n";
        } else if (train->parsed()) {
            const ExperimentConfig cfg = load_config(train_fl);
            cfg.validate();
            const RunOutputs out = run_train(cfg, train_verbose);
            std::cout << "trained " << out.train.steps << " steps, run dir " << out.run_dir
                      << "\n";
        } else if (eval->parsed()) {
            const ExperimentConfig cfg = load_config(eval_fl);
            const std::string dir = !eval_run.empty() ? resolve_out(eval_run) : cfg.out_dir;
            const EvalReport rep = run_eval_dir(dir, cfg);
            std::cout << "pass@1 (g" << rep.pass1_token << ") = " << rep.pass1 << ", native cons@"
                      << rep.cons_k_k << " = " << rep.cons_k << "\n"
                      << "report written to " << dir << "/eval_report.json\n";
        } else if (report->parsed()) {
            write_report(resolve_out(report_run));
            std::cout << "report written to " << resolve_out(report_run) << "/report\n";
        } else if (compare->parsed()) {
            std::vector<std::string> dirs;
            for (const auto& d : compare_dirs) dirs.push_back(resolve_out(d));
            const std::string table = compare_runs(dirs);
            std::cout << table;
            if (!compare_out.empty()) {
                std::ofstream f(compare_out);
                if (!f) throw IoError("cannot open for write: " + compare_out);
                f << table;
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
