#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "setfork/errors.hpp"
#include "setfork/experiment.hpp"
#include "setfork/report.hpp"

using namespace setfork;
namespace fs = std::filesystem;

namespace {

// Small end-to-end experiment used across the CLI-layer tests.
ExperimentConfig small_experiment(const std::string& out_dir) {
    ExperimentConfig cfg = default_experiment();
    cfg.corpus.task_family = TaskFamily::kParity;
    cfg.corpus.styles = {{0, "verbose-decompose", 3.5, 1.0}, {1, "compact-direct", 1.0, 1.0}};
    cfg.corpus.questions = 8;
    cfg.corpus.m_min = cfg.corpus.m_max = 2;
    cfg.corpus.oracle_holdout = 60;
    cfg.model.d_model = 32;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.d_ff = 64;
    cfg.model.context_len = 160;
    cfg.model.vocab_size = 0;
    cfg.train.n_forking = 4;
    cfg.train.match_len = 8;
    cfg.train.epochs = 2;
    cfg.train.global_batch = 4;
    cfg.train.opt.lr = 1e-3;
    cfg.eval.cons_k = 2;
    cfg.eval.cons_sets = 1;
    cfg.eval.pass1_reps = 1;
    cfg.eval.passk_n = 2;
    cfg.eval.mode_reps = 1;
    cfg.eval.gen.max_new = 16;
    cfg.eval_questions = 4;
    cfg.out_dir = out_dir;
    cfg.master_seed = 21;
    cfg.normalize();
    return cfg;
}

}  // namespace

TEST_CASE("experiment config round trip and hash stability") {
    const std::string path = (fs::temp_directory_path() / "setfork_expcfg.json").string();
    ExperimentConfig cfg = small_experiment("runs/x");
    save_experiment(path, cfg);
    const ExperimentConfig loaded = experiment_from_json_file(path);
    CHECK(loaded.corpus.questions == cfg.corpus.questions);
    CHECK(loaded.train.match_len == cfg.train.match_len);
    CHECK(loaded.master_seed == cfg.master_seed);
    CHECK(experiment_config_hash(loaded) == experiment_config_hash(cfg));
    fs::remove(path);
}

TEST_CASE("schema version mismatch is rejected distinctly") {
    const std::string path = (fs::temp_directory_path() / "setfork_badschema.json").string();
    {
        std::ofstream f(path);
        f << "{\"schema_version\": 99}\n";
    }
    CHECK_THROWS_AS(experiment_from_json_file(path), SchemaMismatchError);
    fs::remove(path);
}

TEST_CASE("gen-data writes dataset, sidecar and meta with expected counts") {
    const std::string dir = (fs::temp_directory_path() / "setfork_gen").string();
    fs::remove_all(dir);
    ExperimentConfig cfg = small_experiment(dir);
    cfg.corpus.questions = 200;
    const auto built = run_gen_data(cfg);
    CHECK(built.records.size() == 200);
    const auto side = load_sidecar(dir + "/data/sidecar.jsonl");
    long long labels = 0;
    for (const auto& s : side.styles) labels += static_cast<long long>(s.size());
    CHECK(labels == 400);  // 200 records x M=2
    CHECK(fs::exists(dir + "/data/corpus_meta.json"));
    fs::remove_all(dir);
}

TEST_CASE("train then eval then report end to end") {
    const std::string dir = (fs::temp_directory_path() / "setfork_cli_e2e").string();
    fs::remove_all(dir);
    ExperimentConfig cfg = small_experiment(dir);
    const auto out = run_train(cfg);
    CHECK(fs::exists(dir + "/checkpoint.bin"));
    CHECK(fs::exists(dir + "/manifest.json"));
    CHECK(fs::exists(dir + "/config.json"));
    CHECK(out.train.steps > 0);

    const auto rep = run_eval_dir(dir, cfg);
    CHECK(fs::exists(dir + "/eval_report.json"));
    CHECK(rep.questions == 4);

    write_report(dir);
    CHECK(fs::exists(dir + "/report/counts_evolution.tsv"));
    CHECK(fs::exists(dir + "/report/fig_counts_evolution.svg"));
    CHECK(fs::exists(dir + "/report/learned_edges.tsv"));
    CHECK(fs::exists(dir + "/report/fig_learned_matching.svg"));
    CHECK(fs::exists(dir + "/report/gap_curves.tsv"));
    CHECK(fs::exists(dir + "/report/loss.tsv"));
    CHECK(fs::exists(dir + "/report/token_modes.tsv"));
    CHECK(fs::exists(dir + "/report/passk.tsv"));

    const std::string table = compare_runs({dir});
    CHECK(table.find("pass@1") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("sft_flatten run has no matching records in stats") {
    const std::string dir = (fs::temp_directory_path() / "setfork_cli_sft").string();
    fs::remove_all(dir);
    ExperimentConfig cfg = small_experiment(dir);
    cfg.corpus.m_min = cfg.corpus.m_max = 2;
    cfg.train.matching_mode = MatchingMode::kSftFlatten;
    run_train(cfg);
    std::ifstream f(dir + "/stats.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(f, line)) lines += line.empty() ? 0 : 1;
    CHECK(lines == 0);
    fs::remove_all(dir);
}

TEST_CASE("config re-run reproduces metric tables byte for byte") {
    const std::string d1 = (fs::temp_directory_path() / "setfork_det1").string();
    const std::string d2 = (fs::temp_directory_path() / "setfork_det2").string();
    fs::remove_all(d1);
    fs::remove_all(d2);
    ExperimentConfig c1 = small_experiment(d1);
    ExperimentConfig c2 = small_experiment(d2);
    run_train(c1);
    run_train(c2);
    run_eval_dir(d1, c1);
    run_eval_dir(d2, c2);
    write_report(d1);
    write_report(d2);
    for (const char* f : {"/eval_report.json", "/report/counts_evolution.tsv",
                          "/report/gap_curves.tsv", "/report/loss.tsv", "/report/passk.tsv",
                          "/report/token_modes.tsv"}) {
        std::ifstream a(d1 + f), b(d2 + f);
        REQUIRE(a);
        REQUIRE(b);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        CHECK(sa.str() == sb.str());
    }
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("compare rejects missing run directories") {
    CHECK_THROWS_AS(compare_runs({"/nonexistent/run"}), IoError);
}
