#include <iostream>

#include <CLI11.hpp>

#include "drpose/commands.hpp"
#include "drpose/error.hpp"

using namespace drpose;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::string run_dir;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config_path, "config file (key = value under [section] headers)");
    cmd->add_option("--set", c.sets, "override a config key, e.g. --set train.epochs=5")->take_all();
    cmd->add_option("--run", c.run_dir, "run directory to read from and write into");
}

RunConfig merged(const Common& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        config_set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

RunLayout existing_run(const Common& c) {
    if (c.run_dir.empty()) throw UsageError("--run <dir> is required (gen-data prints it)");
    if (!fs::is_directory(c.run_dir)) throw DataError(c.run_dir + ": run directory not found");
    return {c.run_dir};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffusion-based refinement of 2D-to-3D pose lifting"};
    app.require_subcommand(1);
    app.footer(config_help());

    Common gen_opts, train_opts, infer_opts, eval_opts;
    auto* gen = app.add_subcommand("gen-data", "generate train/val/test datasets into a new run directory");
    add_common(gen, gen_opts);

    auto* train = app.add_subcommand("train", "pretrain the initial predictor or train the refinement model");
    add_common(train, train_opts);
    std::string stage = "pretrain";
    bool resume = false;
    train->add_option("--stage", stage, "pretrain or refine")->check(CLI::IsMember({"pretrain", "refine"}));
    train->add_flag("--resume", resume, "continue from the last epoch checkpoint");

    auto* infer = app.add_subcommand("infer", "refine a dataset and write predictions and a report");
    add_common(infer, infer_opts);
    std::string strategy, input;
    std::size_t H = 0, K = 0;
    infer->add_option("--strategy", strategy, "single, average, aggregate or best-of")
        ->check(CLI::IsMember({"single", "average", "aggregate", "best-of"}));
    infer->add_option("--H", H, "hypotheses per sample");
    infer->add_option("--K", K, "denoising iterations per hypothesis");
    infer->add_option("--input", input, "dataset file to refine instead of the configured split");

    auto* eval = app.add_subcommand("eval", "compare prediction sets against ground truth");
    add_common(eval, eval_opts);
    std::vector<std::string> predictions;
    std::string gt;
    eval->add_option("--predictions", predictions, "infer output directories or predictions.json files")
        ->required()
        ->take_all();
    eval->add_option("--gt", gt, "ground-truth dataset (default: configured split of the run)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            const RunConfig cfg = merged(gen_opts);
            const RunLayout run{gen_opts.run_dir.empty() ? make_run_dir(cfg) : fs::path(gen_opts.run_dir)};
            cmd_gen_data(cfg, run, std::cout);
            std::cout << "run directory: " << run.root.string() << "\n";
        } else if (train->parsed()) {
            const RunConfig cfg = merged(train_opts);
            cmd_train(cfg, existing_run(train_opts), stage == "pretrain" ? Stage::Pretrain : Stage::Refine, resume,
                      std::cout);
        } else if (infer->parsed()) {
            RunConfig cfg = merged(infer_opts);
            if (!strategy.empty()) cfg.strategy = parse_strategy(strategy);
            if (H) cfg.H = H;
            if (K) cfg.K = K;
            cfg.validate();
            cmd_infer(cfg, existing_run(infer_opts), input.empty() ? std::nullopt : std::optional<fs::path>(input),
                      std::cout);
        } else if (eval->parsed()) {
            const RunConfig cfg = merged(eval_opts);
            std::vector<fs::path> files(predictions.begin(), predictions.end());
            cmd_eval(cfg, existing_run(eval_opts), files, gt.empty() ? std::nullopt : std::optional<fs::path>(gt),
                     std::cout);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
