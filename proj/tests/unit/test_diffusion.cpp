#include <doctest.h>

#include <cmath>

#include "drpose/diffusion.hpp"
#include "drpose/error.hpp"
#include "support/gradcheck.hpp"

using namespace drpose;
using drpose::testing::random_tensor;

namespace {

// Returns y_bar unchanged; counts calls.
class StubDenoiser : public Denoiser {
public:
    mutable int calls = 0;
    std::vector<Tensor> denoise(std::span<const Pose3D> y_bar, std::span<const Tensor>, std::span<const Pose2D>,
                                std::size_t) const override {
        ++calls;
        std::vector<Tensor> out;
        for (const auto& p : y_bar) out.push_back(p.joints());
        return out;
    }
    double pose_scale_mm() const override { return 1000.0; }
};

Pose3D simple_pose() {
    Tensor t({17, 3});
    for (std::size_t j = 1; j < 17; ++j)
        for (std::size_t c = 0; c < 3; ++c) t.at(j, c) = 40.0 * static_cast<double>(j) - 100.0 * static_cast<double>(c);
    return Pose3D(t);
}

}  // namespace

TEST_CASE("cosine schedule invariants and high-precision values") {
    const NoiseSchedule s = build_cosine_schedule(1000, 0.008);
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.alpha_bar[1000] < 1e-3);
    CHECK(s.sigma2[1] == 0.0);
    for (std::size_t t = 1; t <= 1000; ++t) {
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        CHECK(s.beta[t] > 0.0);
        CHECK(s.beta[t] <= 0.999);
        CHECK(std::abs(s.alpha_bar[t] - s.alpha_bar[t - 1] * s.alpha[t]) < 1e-12);
    }
    CHECK(std::abs(s.alpha_bar[1] - 0.9999587157751782221976465) < 1e-12);
    CHECK(std::abs(s.alpha_bar[10] - 0.9993687184016584799838578) < 1e-12);
    CHECK(std::abs(s.alpha_bar[100] - 0.9720927371139691743341345) < 1e-12);
    CHECK(std::abs(s.alpha_bar[200] - 0.8987059205995088890443959) < 1e-12);
    CHECK(std::abs(s.alpha_bar[500] - 0.4938435904406377133165527) < 1e-12);

    CHECK_THROWS_AS(build_cosine_schedule(0, 0.008), UsageError);
    CHECK_THROWS_AS(build_cosine_schedule(10, 0.0), UsageError);

    const std::string table = schedule_table(build_cosine_schedule(3, 0.008));
    CHECK(table.rfind("t, beta, alpha_bar, sigma2\n", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 4);
}

TEST_CASE("forward_diffuse: zero noise, t=0, linearity, range") {
    const NoiseSchedule s = build_cosine_schedule(1000, 0.008);
    RngStream rng(1, 0);
    const Tensor y0 = random_tensor(rng, {17, 3});
    const Tensor zero({17, 3});
    const Tensor out = forward_diffuse(y0, 300, zero, s);
    for (std::size_t i = 0; i < y0.size(); ++i) CHECK(out[i] == std::sqrt(s.alpha_bar[300]) * y0[i]);
    CHECK(forward_diffuse(y0, 0, random_tensor(rng, {17, 3}), s) == y0);

    const Tensor eps = random_tensor(rng, {17, 3});
    Tensor y2 = y0, e2 = eps;
    for (double& v : y2.data()) v *= 2.5;
    for (double& v : e2.data()) v *= 2.5;
    const Tensor a = forward_diffuse(y2, 77, e2, s);
    const Tensor b = forward_diffuse(y0, 77, eps, s);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(2.5 * b[i]).epsilon(1e-14));

    CHECK_THROWS_AS(forward_diffuse(y0, 1001, eps, s), UsageError);
    CHECK_THROWS_AS(forward_diffuse(y0, 5, Tensor({17, 2}), s), ShapeError);
}

TEST_CASE("forward_diffuse moments at t=500") {
    const NoiseSchedule s = build_cosine_schedule(1000, 0.008);
    const Tensor y0 = Tensor::vector({0.8, -0.3, 0.5});
    RngStream rng(42, 7);
    const int n = 100000;
    std::array<double, 3> sum{}, sum2{};
    for (int i = 0; i < n; ++i) {
        const Tensor y = forward_diffuse(y0, 500, gaussian(rng, {3}), s);
        for (int c = 0; c < 3; ++c) {
            sum[c] += y[c];
            sum2[c] += y[c] * y[c];
        }
    }
    for (int c = 0; c < 3; ++c) {
        const double mean = sum[c] / n;
        const double var = sum2[c] / n - mean * mean;
        CHECK(std::abs(mean / (std::sqrt(s.alpha_bar[500]) * y0[c]) - 1.0) < 0.02);
        CHECK(std::abs(var / (1.0 - s.alpha_bar[500]) - 1.0) < 0.02);
    }
}

TEST_CASE("posterior step: t=1 boundary and noiseless identity") {
    const NoiseSchedule s = build_cosine_schedule(1000, 0.008);
    RngStream rng(3, 3);
    const Tensor y0 = random_tensor(rng, {17, 3});
    const Tensor yt = random_tensor(rng, {17, 3});
    CHECK(max_abs_diff(posterior_step(yt, y0, 1, s, nullptr), y0) == 0.0);
    // sigma_1 = 0 so a stream makes no difference
    CHECK(max_abs_diff(posterior_step(yt, y0, 1, s, &rng), y0) == 0.0);

    for (int i = 0; i < 20; ++i) {
        const std::size_t t = 2 + static_cast<std::size_t>(rng.uniform_int(0, 997));
        const Tensor noiseless = forward_diffuse(y0, t, Tensor({17, 3}), s);
        const Tensor prev = posterior_step(noiseless, y0, t, s, nullptr);
        const Tensor expect = forward_diffuse(y0, t - 1, Tensor({17, 3}), s);
        CHECK(max_abs_diff(prev, expect) < 1e-12);
        const Tensor printed = posterior_mean(noiseless, y0, t, s, PosteriorForm::AsPrinted);
        CHECK(max_abs_diff(printed, expect) > 1e-6);
    }
    CHECK_THROWS_AS(posterior_step(yt, y0, 0, s, nullptr), UsageError);
}

TEST_CASE("posterior jump matches the single step and the noiseless identity") {
    const NoiseSchedule s = build_cosine_schedule(1000, 0.008);
    RngStream rng(8, 1);
    const Tensor y0 = random_tensor(rng, {17, 3});
    const Tensor z({17, 3});
    const Tensor y200 = forward_diffuse(y0, 200, z, s);
    CHECK(max_abs_diff(posterior_jump(y200, y0, 200, 199, s, nullptr), posterior_step(y200, y0, 200, s, nullptr)) ==
          0.0);
    CHECK(max_abs_diff(posterior_jump(y200, y0, 200, 100, s, nullptr), forward_diffuse(y0, 100, z, s)) < 1e-12);
    CHECK_THROWS_AS(posterior_jump(y200, y0, 200, 200, s, nullptr), UsageError);
}

TEST_CASE("timestep plans") {
    CHECK(make_timestep_plan(200, 1, 1000).steps == std::vector<std::size_t>{200});
    CHECK(make_timestep_plan(200, 2, 1000).steps == std::vector<std::size_t>{200, 100});
    CHECK(make_timestep_plan(4, 4, 1000).steps == std::vector<std::size_t>{4, 3, 2, 1});
    const auto five = make_timestep_plan(200, 5, 1000).steps;
    CHECK(five == std::vector<std::size_t>{200, 160, 120, 80, 40});
    const auto clamped = make_timestep_plan(3, 10, 1000);
    CHECK(clamped.clamped);
    CHECK(clamped.steps == std::vector<std::size_t>{3, 2, 1});
    CHECK_THROWS_AS(make_timestep_plan(200, 0, 1000), UsageError);
    CHECK_THROWS_AS(make_timestep_plan(1001, 1, 1000), UsageError);
    for (std::size_t k = 1; k <= 50; ++k) {
        const auto p = make_timestep_plan(200, k, 1000).steps;
        REQUIRE(p.size() == k);
        CHECK(p.front() == 200);
        for (std::size_t i = 1; i < p.size(); ++i) CHECK(p[i] < p[i - 1]);
        CHECK(p.back() >= 1);
    }
}

TEST_CASE("reverse_refine: single call, determinism, seeds differ") {
    const NoiseSchedule s = build_cosine_schedule(1000, 0.008);
    const StubDenoiser stub;
    const Pose3D yb = simple_pose();
    const Pose2D x(Tensor({17, 2}, 500.0));
    RngStream r1(10, 1);
    const Pose3D out = reverse_refine(yb, x, stub, make_timestep_plan(200, 1, 1000), s, r1);
    CHECK(stub.calls == 1);
    CHECK(out == yb);

    // a model whose output depends on y_t
    class Echo : public Denoiser {
    public:
        std::vector<Tensor> denoise(std::span<const Pose3D>, std::span<const Tensor> y_t, std::span<const Pose2D>,
                                    std::size_t) const override {
            std::vector<Tensor> out;
            for (const auto& y : y_t) {
                Tensor mm = y;
                for (double& v : mm.data()) v *= 100.0;
                out.push_back(mm);
            }
            return out;
        }
        double pose_scale_mm() const override { return 1000.0; }
    } echo;
    const auto plan = make_timestep_plan(200, 5, 1000);
    RngStream a(5, 2), b(5, 2), c(6, 2);
    const Pose3D pa = reverse_refine(yb, x, echo, plan, s, a);
    const Pose3D pb = reverse_refine(yb, x, echo, plan, s, b);
    const Pose3D pc = reverse_refine(yb, x, echo, plan, s, c);
    CHECK(pa == pb);
    CHECK_FALSE(pa == pc);
    CHECK(pa(0, 0) == 0.0);

    // batching does not change per-item results
    std::vector<RefineItem> items{{yb, x, RngStream(5, 2)}, {yb, x, RngStream(6, 2)}};
    const auto batch = reverse_refine_batch(items, echo, plan, s);
    CHECK(batch[0] == pa);
    CHECK(batch[1] == pc);
}

TEST_CASE("reverse_refine: re-noised state at t=100 follows the marginal") {
    const NoiseSchedule s = build_cosine_schedule(1000, 0.008);
    const StubDenoiser stub;
    const Pose3D yb = simple_pose();
    const Pose2D x(Tensor({17, 2}, 500.0));
    const auto plan = make_timestep_plan(200, 2, 1000);
    const double ab = s.alpha_bar[100];
    const int n = 20000;
    const std::size_t j = 5, c = 0;
    double sum = 0, sum2 = 0;
    std::vector<RefineItem> items;
    for (int i = 0; i < n; ++i) items.push_back({yb, x, RngStream(99, static_cast<std::uint64_t>(i))});
    reverse_refine_batch(items, stub, plan, s, {}, [&](std::size_t t, std::span<const Tensor> y_t) {
        if (t != 100) return;
        for (const auto& y : y_t) {
            const double v = y.at(j, c);
            sum += v;
            sum2 += v * v;
        }
    });
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    const double expect_mean = std::sqrt(ab) * yb(j, c) / 1000.0;
    CHECK(std::abs(mean - expect_mean) < 4.0 * std::sqrt((1 - ab) / n));
    CHECK(std::abs(var / (1.0 - ab) - 1.0) < 0.05);
}
