#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "drpose/config.hpp"
#include "drpose/dataset.hpp"
#include "drpose/hypotheses.hpp"
#include "drpose/metrics.hpp"
#include "drpose/model.hpp"
#include "drpose/training.hpp"

namespace drpose {

struct InferOptions {
    HypothesisOptions hyp;  // H, K, t_start, key, chunk, threads, reverse
    Strategy strategy = Strategy::Single;
};

struct Splits {
    DatasetFile train, val, test;
};

// Three datasets drawn from disjoint streams of the run seed.
Splits generate_splits(const RunConfig& config);

NoiseSchedule make_schedule(const RunConfig& config);
RefineModel new_model(const RunConfig& config);
// TrainConfig for the pretraining stage (its epoch count is pretrain_epochs).
TrainConfig pretrain_config(const RunConfig& config);
InferOptions infer_options(const RunConfig& config);

std::vector<PretrainExample> pretrain_examples(const DatasetFile& data);

// Initial-predictor output for every 2D input, batched in chunks across threads.
std::vector<Pose3D> initial_predictions(const RefineModel& model, const std::vector<Pose2D>& x, std::size_t chunk,
                                        std::size_t threads);

// Pairs every sample with the frozen initial prediction.
std::vector<RefineExample> refine_examples(const RefineModel& model, const DatasetFile& data, std::size_t chunk,
                                           std::size_t threads);

struct Prediction {
    std::size_t id = 0;
    Pose3D initial = Pose3D::zeros();
    std::vector<Pose3D> hypotheses;
    Pose3D final = Pose3D::zeros();
};

// Best-of picks by ground truth and so needs `gt`.
Pose3D apply_strategy(Strategy s, const HypothesisSet& hset, const Pose2D& x, const Camera& camera,
                      const Pose3D* gt);

// Runs the full refinement on every sample of `data`. Hypothesis base seeds are
// the sample ids, so a sample's hypotheses do not depend on its neighbours.
std::vector<Prediction> run_inference(const RefineModel& model, const NoiseSchedule& sched, const DatasetFile& data,
                                      const InferOptions& options);

nlohmann::json predictions_to_json(const std::vector<Prediction>& preds);
std::vector<Prediction> predictions_from_json(const nlohmann::json& j, std::size_t joints);

// Metrics of `final` against the dataset's ground truth; sizes must match.
MetricReport evaluate_predictions(const std::vector<Prediction>& preds, const DatasetFile& data);

// "joint,name,mpjpe_mm" rows for external plotting.
std::string per_joint_csv(const MetricReport& r, const std::vector<std::string>& joint_names);

// One row of the strategy comparison table.
struct GridRow {
    std::string method;  // "initial", "baseline" or a strategy name
    std::size_t H = 1;
    std::size_t K = 1;
    MetricReport report;
    double delta_mm = 0.0;  // row MPJPE minus baseline MPJPE
};

// Predictions produced with one (H, K) setting.
struct GridInput {
    std::size_t H = 1;
    std::size_t K = 1;
    std::vector<Prediction> preds;
};

// Baseline is the single-hypothesis H=1, K=1 result, taken from the H=1, K=1
// input if present and otherwise from the first hypothesis of the first input.
// The initial predictor is reported as a reference row. Every other input adds
// average, aggregate and best-of rows.
std::vector<GridRow> evaluate_grid(const std::vector<GridInput>& inputs, const DatasetFile& data);

std::string grid_to_text(const std::vector<GridRow>& rows);
nlohmann::json grid_to_json(const std::vector<GridRow>& rows);

}  // namespace drpose
