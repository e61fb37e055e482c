#include "drpose/hypotheses.hpp"

#include <cmath>
#include <limits>

#include "drpose/error.hpp"
#include "drpose/metrics.hpp"
#include "drpose/parallel.hpp"

namespace drpose {

RngStream hypothesis_stream(std::uint64_t key, std::uint64_t base_seed, std::size_t h) {
    return RngStream(key, base_seed ^ static_cast<std::uint64_t>(h));
}

std::vector<HypothesisSet> generate_hypotheses(const std::vector<HypothesisRequest>& requests, const Denoiser& model,
                                               const NoiseSchedule& sched, const HypothesisOptions& options) {
    if (options.H < 1) throw UsageError("hypothesis count H must be >= 1");
    if (options.chunk < 1) throw UsageError("inference chunk size must be >= 1");
    const TimestepPlan plan = make_timestep_plan(options.t_start, options.K, sched.T);

    std::vector<HypothesisSet> sets(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) {
        sets[i].K = plan.steps.size();
        sets[i].base_seed = requests[i].base_seed;
        sets[i].plan = plan;
        sets[i].hypotheses.assign(options.H, Pose3D::zeros(requests[i].y_bar.joint_count()));
    }

    // flatten (request, hypothesis) pairs and refine them in chunks
    const std::size_t total = requests.size() * options.H;
    const std::size_t chunks = (total + options.chunk - 1) / options.chunk;
    parallel_for(chunks, options.threads, [&](std::size_t c) {
        const std::size_t begin = c * options.chunk;
        const std::size_t end = std::min(total, begin + options.chunk);
        std::vector<RefineItem> items;
        items.reserve(end - begin);
        for (std::size_t k = begin; k < end; ++k) {
            const auto& req = requests[k / options.H];
            items.push_back({req.y_bar, req.x, hypothesis_stream(options.key, req.base_seed, k % options.H)});
        }
        auto out = reverse_refine_batch(items, model, plan, sched, options.reverse);
        for (std::size_t k = begin; k < end; ++k)
            sets[k / options.H].hypotheses[k % options.H] = std::move(out[k - begin]);
    });
    return sets;
}

HypothesisSet generate_hypotheses(const Pose3D& y_bar, const Pose2D& x, const Denoiser& model,
                                  const NoiseSchedule& sched, const HypothesisOptions& options,
                                  std::uint64_t base_seed) {
    return std::move(generate_hypotheses({HypothesisRequest{y_bar, x, base_seed}}, model, sched, options)[0]);
}

Pose3D average(const HypothesisSet& hset) {
    if (hset.H() == 0) throw UsageError("average needs at least one hypothesis");
    Tensor sum(hset.hypotheses[0].joints().shape());
    for (const auto& h : hset.hypotheses)
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += h.joints()[i];
    for (double& v : sum.data()) v /= static_cast<double>(hset.H());
    return Pose3D::rerooted(std::move(sum));
}

std::vector<std::vector<double>> reprojection_distances(const HypothesisSet& hset, const Pose2D& x,
                                                        const Camera& camera) {
    std::vector<std::vector<double>> d(hset.H());
    for (std::size_t h = 0; h < hset.H(); ++h) {
        const Pose3D& p = hset.hypotheses[h];
        if (p.joint_count() != x.joint_count()) throw ShapeError("hypothesis and 2D pose joint counts differ");
        d[h].resize(p.joint_count());
        for (std::size_t j = 0; j < p.joint_count(); ++j) {
            const auto uv = project_point(p(j, 0), p(j, 1), p(j, 2), camera);
            d[h][j] = std::hypot(uv[0] - x(j, 0), uv[1] - x(j, 1));
        }
    }
    return d;
}

Pose3D aggregate(const HypothesisSet& hset, const Pose2D& x, const Camera& camera, AggregateMode mode) {
    if (hset.H() == 0) throw UsageError("aggregate needs at least one hypothesis");
    const auto d = reprojection_distances(hset, x, camera);
    const std::size_t n = x.joint_count();
    Tensor out({n, 3});
    if (mode == AggregateMode::WholePose) {
        std::size_t best = 0;
        double best_mean = std::numeric_limits<double>::infinity();
        for (std::size_t h = 0; h < hset.H(); ++h) {
            double s = 0.0;
            for (double v : d[h]) s += v;
            if (s < best_mean) {
                best_mean = s;
                best = h;
            }
        }
        return Pose3D::rerooted(hset.hypotheses[best].joints());
    }
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t best = 0;
        for (std::size_t h = 1; h < hset.H(); ++h)
            if (d[h][j] < d[best][j]) best = h;
        for (std::size_t c = 0; c < 3; ++c) out.at(j, c) = hset.hypotheses[best](j, c);
    }
    return Pose3D::rerooted(std::move(out));
}

BestOf best_of(const HypothesisSet& hset, const Pose3D& gt) {
    if (hset.H() == 0) throw UsageError("best_of needs at least one hypothesis");
    BestOf b{0, mpjpe(hset.hypotheses[0], gt)};
    for (std::size_t h = 1; h < hset.H(); ++h) {
        const double e = mpjpe(hset.hypotheses[h], gt);
        if (e < b.mpjpe) b = {h, e};
    }
    return b;
}

}  // namespace drpose
