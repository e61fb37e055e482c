#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "drpose/diffusion.hpp"
#include "drpose/graph.hpp"
#include "drpose/model.hpp"

namespace drpose {

// Smoothing term of the per-joint norm, in millimeters.
inline constexpr double kLossEps = 1e-8;

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 512;
    double base_lr = 5e-4;
    double epoch_decay = 0.95;
    double period_decay = 0.5;
    std::size_t decay_period = 5;
    std::size_t T = 1000;
    std::vector<double> joint_weights = std::vector<double>(kJointCount, 1.0);
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate(std::size_t joints) const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// base_lr * epoch_decay^epoch * period_decay^floor(epoch / decay_period)
double lr_at(std::size_t epoch, const TrainConfig& config);

// (1/N) sum_i lambda_i sqrt(|pred_i - gt_i|^2 + eps^2), averaged over a batch
// when the inputs are B x N x 3.
double weighted_loss(const Tensor& pred, const Tensor& gt, std::span<const double> lambda, double eps = kLossEps);
Var weighted_loss_node(Graph& g, Var pred, Var gt, Var lambda, double eps = kLossEps);

enum class Stage { Pretrain, Refine };
const char* stage_name(Stage s);
// Parameter name prefixes trained by a stage: "init." or "sgct." + "prm.".
std::vector<std::string> stage_prefixes(Stage s);

// Adam moments for the parameters a stage trains.
struct OptimizerState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::uint64_t step = 0;

    static OptimizerState for_stage(const ModelParams& params, Stage stage);
    // Every moment names an existing parameter of the same shape.
    void check_against(const ModelParams& params) const;
    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

void adam_update(ModelParams& params, OptimizerState& state, const Gradients& grads, double lr,
                 const TrainConfig& config);

struct RefineExample {
    Pose3D y0;
    Pose2D x;
    Pose3D y_bar;  // frozen initial prediction
};

struct PretrainExample {
    Pose3D y0;
    Pose2D x;
};

// One optimizer step on SGCT + PRM. Per sample: t ~ U[1, T] and eps ~ N(0, I) drawn
// from `stream` in sample order. Returns the batch loss; throws NumericalError
// naming `batch_index` if it is not finite.
double train_step(RefineModel& model, OptimizerState& opt, std::span<const RefineExample> batch,
                  const NoiseSchedule& sched, RngStream& stream, const TrainConfig& config, double lr,
                  std::size_t batch_index = 0);

// One optimizer step on the initial predictor (lambda all ones).
double pretrain_step(RefineModel& model, OptimizerState& opt, std::span<const PretrainExample> batch,
                     const TrainConfig& config, double lr, std::size_t batch_index = 0);

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
    double val_mpjpe = 0.0;
};
// "epoch, lr, mean_loss, val_mpjpe"
std::string format_epoch_log(const EpochLog& log);

struct TrainLoopHooks {
    std::function<double(const RefineModel&)> validate;  // val MPJPE; NaN if absent
    std::function<void(const EpochLog&, const RefineModel&, const OptimizerState&)> on_epoch;
};

// Runs epochs [start_epoch, config.epochs). Sample order is reshuffled each
// epoch from (seed, stage, epoch), and each batch draws from its own stream, so
// a run resumed at an epoch boundary matches an uninterrupted one.
std::vector<EpochLog> train_refine(RefineModel& model, OptimizerState& opt, std::span<const RefineExample> data,
                                   const NoiseSchedule& sched, const TrainConfig& config, std::size_t start_epoch,
                                   const TrainLoopHooks& hooks = {});
std::vector<EpochLog> pretrain_initial(RefineModel& model, OptimizerState& opt, std::span<const PretrainExample> data,
                                       const TrainConfig& config, std::size_t start_epoch,
                                       const TrainLoopHooks& hooks = {});

// Permutation of [0, n) for an epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, Stage stage, std::size_t epoch);

}  // namespace drpose
