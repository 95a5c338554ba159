#pragma once
#include <string>
#include <vector>

namespace setfork {

// Regenerates plot-data tables (TSV) and SVG figures from a run directory's
// stats files into run_dir/report/. Tables are the contract; the images are
// convenience renderings of the same data.
void write_report(const std::string& run_dir);

// Side-by-side metric table (Pass@1 / native Cons@k / Pass@k tail) for
// several run directories. Returns the rendered table.
std::string compare_runs(const std::vector<std::string>& run_dirs);

}  // namespace setfork
