#include "drpose/commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "drpose/checkpoint.hpp"
#include "drpose/error.hpp"

namespace drpose {

namespace {

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw DataError(path.string() + ": write failed");
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void require_file(const fs::path& path, const std::string& what) {
    if (!fs::is_regular_file(path)) throw DataError(path.string() + ": " + what + " not found");
}

DatasetFile load_split(const RunLayout& run, const std::string& split) {
    const fs::path p = run.data(split);
    require_file(p, split + " dataset (run gen-data first)");
    return dataset_read(p);
}

// val MPJPE of single-hypothesis refinement, or of the initial predictor.
double validation_mpjpe(const RefineModel& model, const DatasetFile& val, const RunConfig& config, Stage stage,
                        const NoiseSchedule& sched) {
    if (stage == Stage::Pretrain) {
        std::vector<Pose2D> x;
        for (const auto& s : val.samples) x.push_back(s.noisy);
        const auto pred = initial_predictions(model, x, config.chunk, config.threads);
        double sum = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) sum += mpjpe(pred[i], val.samples[i].gt);
        return sum / static_cast<double>(pred.size());
    }
    InferOptions o = infer_options(config);
    o.hyp.H = 1;
    o.hyp.K = 1;
    o.strategy = Strategy::Single;
    return evaluate_predictions(run_inference(model, sched, val, o), val).mpjpe;
}

}  // namespace

fs::path make_run_dir(const RunConfig& config) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    const std::string base = std::string(stamp) + "-seed" + std::to_string(config.train.seed);
    fs::path dir = fs::path(config.out_dir) / base;
    for (int i = 1; fs::exists(dir); ++i) dir = fs::path(config.out_dir) / (base + "-" + std::to_string(i));
    fs::create_directories(dir);
    return dir;
}

fs::path RunLayout::infer_dir(const RunConfig& c) const {
    return root / "infer" /
           (c.split + "-" + strategy_name(c.strategy) + "-H" + std::to_string(c.H) + "-K" + std::to_string(c.K));
}

void cmd_gen_data(const RunConfig& config, const RunLayout& run, std::ostream& log) {
    config.validate();
    const Splits s = generate_splits(config);
    dataset_write(run.data("train"), s.train);
    dataset_write(run.data("val"), s.val);
    dataset_write(run.data("test"), s.test);
    write_text(run.root / "data" / "config.cfg", dump_config(config));
    log << "train: " << s.train.samples.size() << " samples\n"
        << "val: " << s.val.samples.size() << " samples\n"
        << "test: " << s.test.samples.size() << " samples\n"
        << "written to " << (run.root / "data").string() << "\n";
}

std::vector<EpochLog> cmd_train(const RunConfig& config, const RunLayout& run, Stage stage, bool resume,
                                std::ostream& log) {
    config.validate();
    const DatasetFile train = load_split(run, "train");
    const DatasetFile val = load_split(run, "val");
    const NoiseSchedule sched = make_schedule(config);

    RefineModel model = new_model(config);
    if (stage == Stage::Refine) {
        const fs::path init = run.final_checkpoint(Stage::Pretrain);
        require_file(init, "initial predictor checkpoint (run train --stage pretrain first)");
        model = model_from_checkpoint(load_checkpoint(init, &config.model), make_skeleton());
    }
    OptimizerState opt = OptimizerState::for_stage(model.params(), stage);
    std::size_t start = 0;
    const fs::path latest = run.resume_checkpoint(stage);
    const fs::path log_path = run.stage_dir(stage) / "log.csv";
    std::vector<std::string> kept;
    if (resume) {
        require_file(latest, "resumable checkpoint");
        Checkpoint c = load_checkpoint(latest, &config.model);
        if (c.stage != stage) throw DataError(latest.string() + ": checkpoint belongs to another stage");
        if (!c.optimizer) throw DataError(latest.string() + ": checkpoint has no optimizer state");
        model = model_from_checkpoint(c, make_skeleton());
        opt = std::move(*c.optimizer);
        start = c.epochs_done;
        // keep the log lines of completed epochs
        std::istringstream prev(fs::exists(log_path) ? read_text(log_path) : "");
        std::string line;
        std::getline(prev, line);
        while (kept.size() < start && std::getline(prev, line)) kept.push_back(line);
    }

    const TrainConfig tc = stage == Stage::Pretrain ? pretrain_config(config) : config.train;
    write_text(run.stage_dir(stage) / "config.cfg", dump_config(config));
    std::string log_text = "epoch, lr, mean_loss, val_mpjpe\n";
    for (const auto& l : kept) log_text += l + "\n";
    write_text(log_path, log_text);

    TrainLoopHooks hooks;
    hooks.validate = [&](const RefineModel& m) { return validation_mpjpe(m, val, config, stage, sched); };
    hooks.on_epoch = [&](const EpochLog& e, const RefineModel& m, const OptimizerState& o) {
        const std::string line = format_epoch_log(e);
        log << stage_name(stage) << " " << line << "\n" << std::flush;
        log_text += line + "\n";
        write_text(log_path, log_text);
        save_checkpoint(latest, {m.config(), m.normalization(), m.params(), static_cast<std::uint32_t>(e.epoch + 1),
                                 stage, o});
    };

    std::vector<EpochLog> logs;
    if (stage == Stage::Pretrain) {
        const auto examples = pretrain_examples(train);
        logs = pretrain_initial(model, opt, examples, tc, start, hooks);
    } else {
        const auto examples = refine_examples(model, train, config.chunk, config.threads);
        logs = train_refine(model, opt, examples, sched, tc, start, hooks);
    }
    save_checkpoint(run.final_checkpoint(stage),
                    {model.config(), model.normalization(), model.params(), static_cast<std::uint32_t>(tc.epochs), stage,
                     std::nullopt});
    log << "final checkpoint: " << run.final_checkpoint(stage).string() << "\n";
    return logs;
}

fs::path cmd_infer(const RunConfig& config, const RunLayout& run, const std::optional<fs::path>& input,
                   std::ostream& log) {
    config.validate();
    const fs::path ckpt = run.final_checkpoint(Stage::Refine);
    require_file(ckpt, "refinement checkpoint (run train --stage refine first)");
    DatasetFile data;
    if (input) {
        require_file(*input, "input dataset");
        data = dataset_read(*input);
    } else {
        data = load_split(run, config.split);
    }
    const RefineModel model = model_from_checkpoint(load_checkpoint(ckpt, &config.model), make_skeleton());
    if (data.joint_count != model.config().joints)
        throw DataError("input has " + std::to_string(data.joint_count) + " joints, checkpoint expects " +
                        std::to_string(model.config().joints));

    const auto preds = run_inference(model, make_schedule(config), data, infer_options(config));
    const MetricReport report = evaluate_predictions(preds, data);

    const fs::path out = run.infer_dir(config);
    write_text(out / "predictions.json", predictions_to_json(preds).dump() + "\n");
    nlohmann::json rj = report_to_json(report);
    rj["config"] = {{"strategy", strategy_name(config.strategy)},
                    {"H", config.H},
                    {"K", config.K},
                    {"t_start", config.t_start},
                    {"camera", "synthetic"},
                    {"input", input ? input->string() : config.split}};
    write_text(out / "report.json", rj.dump(2) + "\n");
    std::ostringstream header;
    header << "strategy: " << strategy_name(config.strategy) << "  H=" << config.H << "  K=" << config.K
           << "  t_start=" << config.t_start << "  camera=synthetic\n";
    const std::string text = header.str() + report_to_text(report, make_skeleton().joint_names);
    write_text(out / "report.txt", text);
    write_text(out / "per_joint.csv", per_joint_csv(report, make_skeleton().joint_names));
    write_text(out / "config.cfg", dump_config(config));
    log << text << "outputs in " << out.string() << "\n";
    return out;
}

std::vector<GridRow> cmd_eval(const RunConfig& config, const RunLayout& run, const std::vector<fs::path>& predictions,
                              const std::optional<fs::path>& ground_truth, std::ostream& log) {
    config.validate();
    if (predictions.empty()) throw UsageError("eval needs at least one predictions file");
    std::vector<fs::path> files;
    for (const auto& p : predictions) {
        const fs::path f = fs::is_directory(p) ? p / "predictions.json" : p;
        require_file(f, "predictions file");
        files.push_back(f);
    }
    DatasetFile gt;
    if (ground_truth) {
        require_file(*ground_truth, "ground-truth dataset");
        gt = dataset_read(*ground_truth);
    } else {
        gt = load_split(run, config.split);
    }

    std::vector<GridInput> inputs;
    for (const auto& f : files) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_text(f));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(f.string() + ": " + e.what());
        }
        GridInput in;
        try {
            in.preds = predictions_from_json(j, gt.joint_count);
        } catch (const DataError& e) {
            throw DataError(f.string() + ": " + e.what());
        }
        in.H = in.preds.empty() ? 0 : in.preds[0].hypotheses.size();
        in.K = 0;
        const fs::path report = f.parent_path() / "report.json";
        if (fs::exists(report)) {
            const auto rj = nlohmann::json::parse(read_text(report));
            if (rj.contains("config")) in.K = rj["config"].value("K", std::size_t{0});
        }
        inputs.push_back(std::move(in));
    }
    const auto rows = evaluate_grid(inputs, gt);
    const std::string text = grid_to_text(rows);
    write_text(run.eval_dir() / "grid.txt", text);
    write_text(run.eval_dir() / "grid.json", grid_to_json(rows).dump(2) + "\n");
    write_text(run.eval_dir() / "config.cfg", dump_config(config));
    log << text;
    return rows;
}

}  // namespace drpose
