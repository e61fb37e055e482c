#pragma once

#include <cstdint>
#include <vector>

#include "drpose/diffusion.hpp"
#include "drpose/skeleton.hpp"

namespace drpose {

struct HypothesisSet {
    std::vector<Pose3D> hypotheses;
    std::size_t K = 1;
    std::uint64_t base_seed = 0;
    TimestepPlan plan;

    std::size_t H() const noexcept { return hypotheses.size(); }
};

// Stream for hypothesis h: keyed by `key`, stream id base_seed ^ h.
RngStream hypothesis_stream(std::uint64_t key, std::uint64_t base_seed, std::size_t h);

struct HypothesisRequest {
    Pose3D y_bar;
    Pose2D x;
    std::uint64_t base_seed = 0;
};

struct HypothesisOptions {
    std::size_t H = 1;
    std::size_t K = 1;
    std::size_t t_start = 200;
    std::uint64_t key = 0;         // run seed
    std::size_t chunk = 64;        // network batch size
    std::size_t threads = 1;
    ReverseOptions reverse;
};

// One set per request. Every hypothesis uses its own stream, so the result does
// not depend on chunk size or thread count.
std::vector<HypothesisSet> generate_hypotheses(const std::vector<HypothesisRequest>& requests, const Denoiser& model,
                                               const NoiseSchedule& sched, const HypothesisOptions& options);

HypothesisSet generate_hypotheses(const Pose3D& y_bar, const Pose2D& x, const Denoiser& model,
                                  const NoiseSchedule& sched, const HypothesisOptions& options,
                                  std::uint64_t base_seed);

Pose3D average(const HypothesisSet& hset);

enum class AggregateMode { JointWise, WholePose };

// Pixel distance between each hypothesis joint's projection and the 2D input, H x N.
std::vector<std::vector<double>> reprojection_distances(const HypothesisSet& hset, const Pose2D& x,
                                                        const Camera& camera);

// Per joint, the joint of the hypothesis whose projection is closest to x (ties:
// lowest index). WholePose picks the single hypothesis with the smallest mean distance.
Pose3D aggregate(const HypothesisSet& hset, const Pose2D& x, const Camera& camera,
                 AggregateMode mode = AggregateMode::JointWise);

struct BestOf {
    std::size_t index = 0;
    double mpjpe = 0.0;
};
BestOf best_of(const HypothesisSet& hset, const Pose3D& gt);

}  // namespace drpose
