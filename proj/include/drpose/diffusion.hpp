#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "drpose/rng.hpp"
#include "drpose/skeleton.hpp"
#include "drpose/tensor.hpp"

namespace drpose {

// Cosine variance schedule. Arrays are indexed by timestep; beta, alpha and
// sigma2 hold a zero placeholder at index 0, alpha_bar[0] == 1.
struct NoiseSchedule {
    static constexpr double kBetaCeiling = 0.999;

    std::size_t T = 0;
    double offset = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma2;
};

NoiseSchedule build_cosine_schedule(std::size_t T, double offset);

// "t, beta, alpha_bar, sigma2" with one row per timestep 1..T.
std::string schedule_table(const NoiseSchedule& sched);

// sqrt(alpha_bar_t) * y0 + sqrt(1 - alpha_bar_t) * eps, for 0 <= t <= T.
Tensor forward_diffuse(const Tensor& y0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);

// Coefficient on y_t in the posterior mean. `Standard` uses sqrt(alpha_t), which
// is what q(y_{t-1} | y_t, y_0) requires; `AsPrinted` uses sqrt(alpha_bar_t) and
// exists only to demonstrate that it breaks the noiseless identity.
enum class PosteriorForm { Standard, AsPrinted };

Tensor posterior_mean(const Tensor& y_t, const Tensor& y0_hat, std::size_t t, const NoiseSchedule& sched,
                      PosteriorForm form = PosteriorForm::Standard);

// One reverse step t -> t-1. Adds sigma_t * z when a stream is given.
Tensor posterior_step(const Tensor& y_t, const Tensor& y0_hat, std::size_t t, const NoiseSchedule& sched,
                      RngStream* stream);

// Posterior q(y_s | y_t, y0_hat) for any 0 <= s < t; equals posterior_step when s == t-1.
Tensor posterior_jump(const Tensor& y_t, const Tensor& y0_hat, std::size_t t, std::size_t s,
                      const NoiseSchedule& sched, RngStream* stream);

struct TimestepPlan {
    std::size_t t_start = 0;
    std::vector<std::size_t> steps;  // strictly decreasing, steps[0] == t_start
    bool clamped = false;            // requested K exceeded t_start
};

// K evenly spaced timesteps: round(t_start * (K - i) / K) for i = 0..K-1.
TimestepPlan make_timestep_plan(std::size_t t_start, std::size_t K, std::size_t T);

// How the state is re-noised between planned timesteps.
enum class Renoise { Marginal, Posterior };
// How the starting state at t_start is formed.
enum class StartState { PureNoise, DiffusedInitial };

struct ReverseOptions {
    Renoise renoise = Renoise::Marginal;
    StartState start = StartState::DiffusedInitial;
    friend bool operator==(const ReverseOptions&, const ReverseOptions&) = default;
};

// Batched single-call refinement network. y_t is in diffusion units
// (millimeters / pose_scale); the result is y0_hat in millimeters.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual std::vector<Tensor> denoise(std::span<const Pose3D> y_bar, std::span<const Tensor> y_t,
                                        std::span<const Pose2D> x, std::size_t t) const = 0;
    virtual double pose_scale_mm() const = 0;
};

struct RefineItem {
    Pose3D y_bar;
    Pose2D x;
    RngStream stream;
};

// Called with the state entering each network call.
using ReverseObserver = std::function<void(std::size_t t, std::span<const Tensor> y_t)>;

// Runs the reverse loop for every item in lock-step along `plan`. Each item draws
// only from its own stream, so results do not depend on how items are batched.
std::vector<Pose3D> reverse_refine_batch(std::vector<RefineItem>& items, const Denoiser& model,
                                         const TimestepPlan& plan, const NoiseSchedule& sched,
                                         const ReverseOptions& options = {}, const ReverseObserver& observer = {});

Pose3D reverse_refine(const Pose3D& y_bar, const Pose2D& x, const Denoiser& model, const TimestepPlan& plan,
                      const NoiseSchedule& sched, RngStream& stream, const ReverseOptions& options = {});

}  // namespace drpose
