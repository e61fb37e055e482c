#include "drpose/diffusion.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <sstream>

#include "drpose/error.hpp"

namespace drpose {

NoiseSchedule build_cosine_schedule(std::size_t T, double offset) {
    if (T < 1) throw UsageError("diffusion steps T must be >= 1");
    if (!(offset > 0.0)) throw UsageError("cosine offset must be positive");
    auto f = [&](double t) {
        const double c = std::cos((t / static_cast<double>(T) + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule s;
    s.T = T;
    s.offset = offset;
    s.beta.assign(T + 1, 0.0);
    s.alpha.assign(T + 1, 0.0);
    s.alpha_bar.assign(T + 1, 1.0);
    s.sigma2.assign(T + 1, 0.0);
    const double f0 = f(0.0);
    double prev_closed = 1.0;
    for (std::size_t t = 1; t <= T; ++t) {
        const double closed = f(static_cast<double>(t)) / f0;
        double beta = 1.0 - closed / prev_closed;
        beta = std::min(std::max(beta, 0.0), NoiseSchedule::kBetaCeiling);
        if (!(beta > 0.0)) throw NumericalError("cosine schedule produced a non-positive beta at t=" + std::to_string(t));
        prev_closed = closed;
        s.beta[t] = beta;
        s.alpha[t] = 1.0 - beta;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        s.sigma2[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * beta;
    }
    return s;
}

std::string schedule_table(const NoiseSchedule& sched) {
    std::ostringstream os;
    os << "t, beta, alpha_bar, sigma2\n";
    char line[128];
    for (std::size_t t = 1; t <= sched.T; ++t) {
        std::snprintf(line, sizeof line, "%zu, %.17g, %.17g, %.17g\n", t, sched.beta[t], sched.alpha_bar[t],
                      sched.sigma2[t]);
        os << line;
    }
    return os.str();
}

namespace {

void check_t(std::size_t t, std::size_t lo, const NoiseSchedule& sched, const char* what) {
    if (t < lo || t > sched.T)
        throw UsageError(std::string(what) + ": timestep " + std::to_string(t) + " outside [" + std::to_string(lo) +
                         ", " + std::to_string(sched.T) + "]");
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

Tensor combine(double ca, const Tensor& a, double cb, const Tensor& b) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * a[i] + cb * b[i];
    return out;
}

void add_noise(Tensor& x, double stddev, RngStream* stream) {
    if (!stream || stddev == 0.0) return;
    const Tensor z = gaussian(*stream, x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += stddev * z[i];
}

}  // namespace

Tensor forward_diffuse(const Tensor& y0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
    check_t(t, 0, sched, "forward_diffuse");
    check_same(y0, eps, "forward_diffuse");
    const double ab = sched.alpha_bar[t];
    return combine(std::sqrt(ab), y0, std::sqrt(1.0 - ab), eps);
}

Tensor posterior_mean(const Tensor& y_t, const Tensor& y0_hat, std::size_t t, const NoiseSchedule& sched,
                      PosteriorForm form) {
    check_t(t, 1, sched, "posterior_step");
    check_same(y_t, y0_hat, "posterior_step");
    const double ab = sched.alpha_bar[t];
    const double ab_prev = sched.alpha_bar[t - 1];
    const double beta = sched.beta[t];
    const double yt_root = form == PosteriorForm::Standard ? std::sqrt(sched.alpha[t]) : std::sqrt(ab);
    const double c_yt = yt_root * (1.0 - ab_prev) / (1.0 - ab);
    const double c_y0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    return combine(c_yt, y_t, c_y0, y0_hat);
}

Tensor posterior_step(const Tensor& y_t, const Tensor& y0_hat, std::size_t t, const NoiseSchedule& sched,
                      RngStream* stream) {
    Tensor out = posterior_mean(y_t, y0_hat, t, sched);
    add_noise(out, std::sqrt(sched.sigma2[t]), stream);
    return out;
}

Tensor posterior_jump(const Tensor& y_t, const Tensor& y0_hat, std::size_t t, std::size_t s,
                      const NoiseSchedule& sched, RngStream* stream) {
    check_t(t, 1, sched, "posterior_jump");
    if (s >= t) throw UsageError("posterior_jump: target timestep must precede the source");
    if (s + 1 == t) return posterior_step(y_t, y0_hat, t, sched, stream);
    check_same(y_t, y0_hat, "posterior_jump");
    const double ab_t = sched.alpha_bar[t];
    const double ab_s = sched.alpha_bar[s];
    const double ab_ts = ab_t / ab_s;
    const double c_y0 = std::sqrt(ab_s) * (1.0 - ab_ts) / (1.0 - ab_t);
    const double c_yt = std::sqrt(ab_ts) * (1.0 - ab_s) / (1.0 - ab_t);
    Tensor out = combine(c_yt, y_t, c_y0, y0_hat);
    add_noise(out, std::sqrt((1.0 - ab_s) / (1.0 - ab_t) * (1.0 - ab_ts)), stream);
    return out;
}

TimestepPlan make_timestep_plan(std::size_t t_start, std::size_t K, std::size_t T) {
    if (K < 1) throw UsageError("iteration count K must be >= 1");
    if (t_start < 1 || t_start > T)
        throw UsageError("t_start " + std::to_string(t_start) + " outside [1, " + std::to_string(T) + "]");
    TimestepPlan plan;
    plan.t_start = t_start;
    if (K > t_start) {
        std::cerr << "warning: K=" << K << " exceeds t_start=" << t_start << "; clamping K to " << t_start << '\n';
        K = t_start;
        plan.clamped = true;
    }
    for (std::size_t i = 0; i < K; ++i) {
        const double v = static_cast<double>(t_start) * static_cast<double>(K - i) / static_cast<double>(K);
        plan.steps.push_back(static_cast<std::size_t>(std::llround(v)));
    }
    return plan;
}

std::vector<Pose3D> reverse_refine_batch(std::vector<RefineItem>& items, const Denoiser& model,
                                         const TimestepPlan& plan, const NoiseSchedule& sched,
                                         const ReverseOptions& options, const ReverseObserver& observer) {
    if (plan.steps.empty()) throw UsageError("empty timestep plan");
    for (std::size_t t : plan.steps) check_t(t, 1, sched, "reverse_refine");
    const std::size_t n = items.size();
    if (n == 0) return {};
    const double scale = model.pose_scale_mm();

    std::vector<Pose3D> y_bar;
    std::vector<Pose2D> x;
    y_bar.reserve(n);
    x.reserve(n);
    for (const auto& it : items) {
        y_bar.push_back(it.y_bar);
        x.push_back(it.x);
    }

    auto to_units = [&](const Tensor& mm) {
        Tensor u = mm;
        for (double& v : u.data()) v /= scale;
        return u;
    };

    std::vector<Tensor> y_t(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor noise = gaussian(items[i].stream, y_bar[i].joints().shape());
        y_t[i] = options.start == StartState::PureNoise
                     ? std::move(noise)
                     : forward_diffuse(to_units(y_bar[i].joints()), plan.steps[0], noise, sched);
    }

    std::vector<Tensor> y0_hat;
    for (std::size_t k = 0; k < plan.steps.size(); ++k) {
        const std::size_t t = plan.steps[k];
        if (observer) observer(t, y_t);
        y0_hat = model.denoise(y_bar, y_t, x, t);
        if (y0_hat.size() != n) throw ShapeError("denoiser returned a wrong batch size");
        if (k + 1 == plan.steps.size()) break;
        const std::size_t next = plan.steps[k + 1];
        for (std::size_t i = 0; i < n; ++i) {
            // training only ever diffuses rooted poses, and the loss leaves the
            // network's global offset free, so re-root before re-noising
            Tensor rooted = y0_hat[i];
            const std::size_t w = rooted.dim(1);
            for (std::size_t j = rooted.dim(0); j-- > 0;)
                for (std::size_t a = 0; a < w; ++a) rooted.at(j, a) -= rooted.at(0, a);
            const Tensor y0_units = to_units(rooted);
            if (options.renoise == Renoise::Marginal) {
                y_t[i] = forward_diffuse(y0_units, next, gaussian(items[i].stream, y0_units.shape()), sched);
            } else {
                y_t[i] = posterior_jump(y_t[i], y0_units, t, next, sched, &items[i].stream);
            }
        }
    }

    std::vector<Pose3D> out;
    out.reserve(n);
    for (auto& y : y0_hat) {
        if (!y.all_finite()) throw NumericalError("refinement produced non-finite joints");
        out.push_back(Pose3D::rerooted(std::move(y)));
    }
    return out;
}

Pose3D reverse_refine(const Pose3D& y_bar, const Pose2D& x, const Denoiser& model, const TimestepPlan& plan,
                      const NoiseSchedule& sched, RngStream& stream, const ReverseOptions& options) {
    std::vector<RefineItem> items{RefineItem{y_bar, x, stream}};
    auto out = reverse_refine_batch(items, model, plan, sched, options);
    stream = items[0].stream;
    return std::move(out[0]);
}

}  // namespace drpose
