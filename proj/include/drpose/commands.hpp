#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

#include "drpose/config.hpp"
#include "drpose/pipeline.hpp"

namespace drpose {

namespace fs = std::filesystem;

// Creates <out_dir>/<UTC timestamp>-seed<seed>, adding a numeric suffix if it exists.
fs::path make_run_dir(const RunConfig& config);

// Layout inside a run directory.
struct RunLayout {
    fs::path root;

    fs::path data(const std::string& split) const { return root / "data" / (split + ".drpz"); }
    fs::path stage_dir(Stage s) const { return root / stage_name(s); }
    fs::path final_checkpoint(Stage s) const { return stage_dir(s) / "final.drpm"; }
    fs::path resume_checkpoint(Stage s) const { return stage_dir(s) / "latest.drpm"; }
    fs::path infer_dir(const RunConfig& c) const;
    fs::path eval_dir() const { return root / "eval"; }
};

// Each command validates its inputs before any compute, writes the merged
// config next to its outputs, and reports progress on `log`.
void cmd_gen_data(const RunConfig& config, const RunLayout& run, std::ostream& log);
std::vector<EpochLog> cmd_train(const RunConfig& config, const RunLayout& run, Stage stage, bool resume,
                                std::ostream& log);
// Returns the output directory. `input` replaces the configured split's dataset.
fs::path cmd_infer(const RunConfig& config, const RunLayout& run, const std::optional<fs::path>& input,
                   std::ostream& log);
// `predictions` are infer output directories or predictions.json files; H and
// K come from the report next to each file when present.
std::vector<GridRow> cmd_eval(const RunConfig& config, const RunLayout& run, const std::vector<fs::path>& predictions,
                              const std::optional<fs::path>& ground_truth, std::ostream& log);

}  // namespace drpose
