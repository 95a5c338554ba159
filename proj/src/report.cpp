#include "setfork/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "setfork/errors.hpp"
#include "setfork/experiment.hpp"
#include "setfork/infer.hpp"

namespace setfork {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Just enough SVG for the figures below.
class Svg {
public:
    Svg(double w, double h) : w_(w), h_(h) {
        os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
            << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
        os_ << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill, double opacity = 1.0) {
        os_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
            << "\" fill=\"" << fill << "\" fill-opacity=\"" << opacity << "\"/>\n";
    }
    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width = 1.0) {
        os_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
            << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\"/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                  double width = 1.5) {
        os_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << width
            << "\" points=\"";
        for (const auto& [x, y] : pts) os_ << x << "," << y << " ";
        os_ << "\"/>\n";
    }
    void circle(double x, double y, double r, const std::string& fill) {
        os_ << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << fill
            << "\"/>\n";
    }
    void text(double x, double y, const std::string& s, int size = 11,
              const std::string& anchor = "start") {
        os_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
            << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << s
            << "</text>\n";
    }
    void save(const std::string& path) {
        os_ << "</svg>\n";
        std::ofstream f(path);
        if (!f) throw IoError("cannot open for write: " + path);
        f << os_.str();
    }

private:
    double w_, h_;
    std::ostringstream os_;
};

json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("missing file: " + path);
    return json::parse(f);
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << v;
    return os.str();
}

// ---- counts evolution (configuration index x epoch) -----------------------

void emit_counts(const std::string& run_dir, const std::string& out) {
    const json counts = load_json(run_dir + "/counts.json");
    // Collect the union of (m, k) keys in canonical order.
    std::map<std::pair<int, long long>, int> col_of;
    for (const auto& entry : counts.at("final")) {
        col_of[{entry.at("m").get<int>(), entry.at("k").get<long long>()}] = 0;
    }
    int col = 0;
    for (auto& [key, c] : col_of) c = col++;
    const int epochs = static_cast<int>(counts.at("epochs").size());

    std::ofstream tsv(out + "/counts_evolution.tsv");
    tsv << "epoch\tm\tk\tcumulative_count\n";
    std::vector<std::vector<double>> grid(epochs, std::vector<double>(col_of.size(), 0.0));
    double maxv = 1.0;
    for (int e = 0; e < epochs; ++e) {
        for (const auto& entry : counts.at("epochs")[e]) {
            const std::pair<int, long long> key = {entry.at("m").get<int>(),
                                                   entry.at("k").get<long long>()};
            const double v = entry.at("count").get<double>();
            grid[e][col_of[key]] = v;
            maxv = std::max(maxv, v);
            tsv << (e + 1) << '\t' << key.first << '\t' << key.second << '\t' << v << '\n';
        }
    }

    const double cw = std::max(4.0, 560.0 / std::max<size_t>(1, col_of.size()));
    const double ch = std::max(8.0, 280.0 / std::max(1, epochs));
    Svg svg(80 + cw * col_of.size() + 20, 60 + ch * epochs + 40);
    svg.text(20, 30, "cumulative optimal-matching counts (columns: config k, rows: epoch)");
    for (int e = 0; e < epochs; ++e) {
        for (size_t c = 0; c < col_of.size(); ++c) {
            const double v = grid[e][c] / maxv;
            svg.rect(80 + cw * c, 50 + ch * e, cw - 1, ch - 1, "#1f77b4", 0.08 + 0.92 * v);
        }
        svg.text(75, 50 + ch * e + ch * 0.7, std::to_string(e + 1), 10, "end");
    }
    int c = 0;
    for (const auto& [key, cidx] : col_of) {
        if (col_of.size() <= 40 || c % std::max<size_t>(1, col_of.size() / 40) == 0) {
            svg.text(80 + cw * cidx + cw / 2, 60 + ch * epochs + 12, std::to_string(key.second), 8,
                     "middle");
        }
        ++c;
    }
    svg.save(out + "/fig_counts_evolution.svg");
}

// ---- learned matching bipartite graph --------------------------------------

void emit_learned(const std::string& run_dir, const std::string& out) {
    if (!fs::exists(run_dir + "/learned_matching.json")) return;
    const LearnedMatching lm = load_learned_matching(run_dir + "/learned_matching.json");

    std::ofstream tsv(out + "/learned_edges.tsv");
    tsv << "token\ttrace\tweight\n";
    long long maxw = 1;
    int max_trace = 0;
    for (const auto& [edge, w] : lm.edge_weight) {
        tsv << (edge.first + 1) << '\t' << (edge.second + 1) << '\t' << w << '\n';
        maxw = std::max(maxw, w);
        max_trace = std::max(max_trace, edge.second + 1);
    }

    const double H = 80.0 + 60.0 * std::max(lm.n, max_trace);
    Svg svg(420, H);
    svg.text(20, 30, "learned matchings (edge width = final-window count)");
    auto token_y = [&](int i) { return 70.0 + 60.0 * i; };
    auto trace_y = [&](int j) { return 70.0 + 60.0 * j; };
    for (const auto& [edge, w] : lm.edge_weight) {
        const double width = 0.8 + 6.0 * static_cast<double>(w) / static_cast<double>(maxw);
        svg.line(120, token_y(edge.first), 300, trace_y(edge.second), "#444", width);
    }
    for (int i = 0; i < lm.n; ++i) {
        svg.circle(120, token_y(i), 14, i + 1 == lm.i_star ? "#d62728" : "#1f77b4");
        svg.text(100, token_y(i) + 4, "g" + std::to_string(i + 1), 11, "end");
    }
    for (int j = 0; j < max_trace; ++j) {
        svg.circle(300, trace_y(j), 14, "#2ca02c");
        svg.text(320, trace_y(j) + 4, "r" + std::to_string(j + 1), 11, "start");
    }
    svg.save(out + "/fig_learned_matching.svg");
}

// ---- gap curves ------------------------------------------------------------

void emit_gaps(const std::string& run_dir, const std::string& out) {
    std::ifstream f(run_dir + "/stats.jsonl");
    if (!f) return;  // SFT runs have no matching records
    std::map<long, std::array<double, 3>> acc;  // step -> {gap2 sum, gapmean sum, count}
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (!j.contains("second")) continue;
        const long step = j.at("step").get<long>();
        auto& a = acc[step];
        a[0] += j.at("second").get<double>() - j.at("best").get<double>();
        a[1] += j.at("mean_others").get<double>() - j.at("best").get<double>();
        a[2] += 1.0;
    }
    if (acc.empty()) return;

    std::ofstream tsv(out + "/gap_curves.tsv");
    tsv << "step\tgap_second\tgap_mean_others\n";
    std::vector<std::pair<double, double>> g2, gm;
    double maxy = 1e-9, maxx = 1.0;
    for (const auto& [step, a] : acc) {
        const double v2 = a[0] / a[2], vm = a[1] / a[2];
        tsv << step << '\t' << v2 << '\t' << vm << '\n';
        g2.push_back({static_cast<double>(step), v2});
        gm.push_back({static_cast<double>(step), vm});
        maxy = std::max({maxy, v2, vm});
        maxx = std::max(maxx, static_cast<double>(step));
    }
    Svg svg(560, 320);
    svg.text(20, 24, "matching-cost gaps per step (dark: second-best, light: mean others)");
    auto X = [&](double s) { return 50 + 480 * s / maxx; };
    auto Y = [&](double v) { return 290 - 250 * std::max(0.0, v) / maxy; };
    svg.line(50, 290, 540, 290, "#999");
    svg.line(50, 40, 50, 290, "#999");
    for (auto& p : g2) p = {X(p.first), Y(p.second)};
    for (auto& p : gm) p = {X(p.first), Y(p.second)};
    svg.polyline(g2, "#1f77b4", 2.0);
    svg.polyline(gm, "#9ecae1", 2.0);
    svg.text(540, 305, "step", 10, "end");
    svg.text(45, 38, fmt(maxy, 3), 9, "end");
    svg.save(out + "/fig_gap_curves.svg");
}

// ---- loss curve ------------------------------------------------------------

void emit_loss(const std::string& run_dir, const std::string& out) {
    const json summary = load_json(run_dir + "/train_summary.json");
    const auto losses = summary.at("step_losses").get<std::vector<double>>();
    if (losses.empty()) return;
    std::ofstream tsv(out + "/loss.tsv");
    tsv << "step\tloss\n";
    double maxy = 1e-9;
    for (size_t i = 0; i < losses.size(); ++i) {
        tsv << i << '\t' << losses[i] << '\n';
        maxy = std::max(maxy, losses[i]);
    }
    Svg svg(560, 320);
    svg.text(20, 24, "training loss per optimizer step");
    std::vector<std::pair<double, double>> pts;
    for (size_t i = 0; i < losses.size(); ++i) {
        pts.push_back({50 + 480.0 * static_cast<double>(i) / static_cast<double>(losses.size() - 1 + 1e-9),
                       290 - 250.0 * losses[i] / maxy});
    }
    svg.line(50, 290, 540, 290, "#999");
    svg.line(50, 40, 50, 290, "#999");
    svg.polyline(pts, "#d62728", 1.5);
    svg.text(45, 38, fmt(maxy, 2), 9, "end");
    svg.save(out + "/fig_loss.svg");
}

// ---- per-token modes and pass@k ---------------------------------------------

void emit_eval(const std::string& run_dir, const std::string& out) {
    if (!fs::exists(run_dir + "/eval_report.json")) return;
    const EvalReport rep = load_eval_report(run_dir + "/eval_report.json");

    {
        std::ofstream tsv(out + "/token_modes.tsv");
        tsv << "fork_index\taccuracy\tmean_len\tlen_p10\tlen_p50\tlen_p90\tstyle_counts\n";
        for (const auto& st : rep.modes.tokens) {
            tsv << st.fork_index << '\t' << st.accuracy << '\t' << st.mean_len << '\t' << st.len_p10
                << '\t' << st.len_p50 << '\t' << st.len_p90 << '\t';
            bool first = true;
            for (const auto& [s, c] : st.style_counts) {
                if (!first) tsv << ',';
                tsv << s << ':' << c;
                first = false;
            }
            tsv << '\n';
        }
        const int n = static_cast<int>(rep.modes.tokens.size());
        if (n > 0) {
            double maxlen = 1.0;
            for (const auto& st : rep.modes.tokens) maxlen = std::max(maxlen, st.len_p90 * 1.2);
            Svg svg(80 + 90.0 * n, 340);
            svg.text(20, 24, "per-token thinking length (whiskers p10-p90, bar p50) and accuracy");
            for (int i = 0; i < n; ++i) {
                const auto& st = rep.modes.tokens[i];
                const double x = 100 + 90.0 * i;
                auto Y = [&](double v) { return 300 - 240 * v / maxlen; };
                svg.line(x, Y(st.len_p10), x, Y(st.len_p90), "#1f77b4", 2.0);
                svg.line(x - 16, Y(st.len_p50), x + 16, Y(st.len_p50), "#d62728", 3.0);
                svg.circle(x, Y(st.mean_len), 3, "#444");
                svg.text(x, 318, "g" + std::to_string(st.fork_index), 11, "middle");
                svg.text(x, Y(st.len_p90) - 8, fmt(st.accuracy, 2), 10, "middle");
            }
            svg.save(out + "/fig_token_modes.svg");
        }
    }
    {
        std::ofstream tsv(out + "/passk.tsv");
        tsv << "k\tpass_at_k\n";
        for (size_t i = 0; i < rep.passk_ks.size(); ++i) {
            tsv << rep.passk_ks[i] << '\t' << rep.passk[i] << '\n';
        }
        if (!rep.passk.empty()) {
            Svg svg(420, 300);
            svg.text(20, 24, "pass@k coverage");
            const double maxk = rep.passk_ks.back();
            std::vector<std::pair<double, double>> pts;
            for (size_t i = 0; i < rep.passk_ks.size(); ++i) {
                pts.push_back({50 + 330.0 * rep.passk_ks[i] / maxk, 270 - 220.0 * rep.passk[i]});
            }
            svg.line(50, 270, 390, 270, "#999");
            svg.line(50, 40, 50, 270, "#999");
            svg.polyline(pts, "#2ca02c", 2.0);
            for (const auto& [x, y] : pts) svg.circle(x, y, 3, "#2ca02c");
            svg.save(out + "/fig_passk.svg");
        }
    }
}

}  // namespace

void write_report(const std::string& run_dir) {
    if (!fs::exists(run_dir + "/train_summary.json")) {
        throw IoError("not a run directory (missing train_summary.json): " + run_dir);
    }
    const std::string out = run_dir + "/report";
    fs::create_directories(out);
    emit_counts(run_dir, out);
    emit_learned(run_dir, out);
    emit_gaps(run_dir, out);
    emit_loss(run_dir, out);
    emit_eval(run_dir, out);
}

std::string compare_runs(const std::vector<std::string>& run_dirs) {
    if (run_dirs.empty()) throw ConfigError("compare: no run directories given");
    struct Entry {
        std::string name, mode;
        EvalReport rep;
    };
    std::vector<Entry> entries;
    for (const auto& dir : run_dirs) {
        const json manifest = load_json(dir + "/manifest.json");
        const int schema = manifest.value("schema_version", -1);
        if (schema != kSchemaVersion) {
            throw SchemaMismatchError("run " + dir + " has schema_version " +
                                      std::to_string(schema));
        }
        Entry e;
        e.name = fs::path(dir).filename().string();
        e.mode = manifest.value("matching_mode", std::string("?"));
        e.rep = load_eval_report(dir + "/eval_report.json");
        entries.push_back(std::move(e));
    }

    std::ostringstream os;
    auto row = [&](const std::string& label, auto&& value_of) {
        os << std::left;
        os.width(26);
        os << label;
        for (const auto& e : entries) {
            os << "| ";
            os.width(16);
            os << value_of(e);
        }
        os << '\n';
    };
    row("run", [](const Entry& e) { return e.name; });
    row("matching", [](const Entry& e) { return e.mode; });
    row("pass@1 (i*)", [](const Entry& e) { return fmt(e.rep.pass1); });
    for (size_t i = 0; i < entries[0].rep.pass1_per_token.size(); ++i) {
        row("pass@1 g" + std::to_string(i + 1), [&](const Entry& e) {
            return i < e.rep.pass1_per_token.size() ? fmt(e.rep.pass1_per_token[i]) : "-";
        });
    }
    row("native cons@" + std::to_string(entries[0].rep.cons_k_k),
        [](const Entry& e) { return fmt(e.rep.cons_k); });
    if (!entries[0].rep.passk.empty()) {
        row("pass@" + std::to_string(entries[0].rep.passk_ks.back()),
            [](const Entry& e) { return e.rep.passk.empty() ? "-" : fmt(e.rep.passk.back()); });
    }
    row("collapse max TV", [](const Entry& e) { return fmt(e.rep.modes.collapse_max_tv); });
    return os.str();
}

}  // namespace setfork
