#include <doctest.h>

#include <algorithm>
#include <set>

#include "drpose/error.hpp"
#include "drpose/model.hpp"
#include "support/gradcheck.hpp"

using namespace drpose;
using drpose::testing::gradcheck;
using drpose::testing::random_tensor;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.channels = 8;
    c.heads = 2;
    c.blocks = 1;
    c.time_embed_dim = 4;
    c.initial_layers = 1;
    c.prm_hidden = 8;
    return c;
}

// Fills every parameter (including zero-initialized ones) with noise.
void randomize(ModelParams& p, std::uint64_t seed, double scale = 0.3) {
    RngStream rng(seed, 0);
    for (auto& [_, t] : p.tensors()) t = random_tensor(rng, t.shape(), scale);
}

Pose3D random_pose(RngStream& rng) {
    Tensor t = random_tensor(rng, {17, 3}, 200.0);
    return Pose3D::rerooted(t);
}

Pose2D random_2d(RngStream& rng) {
    Tensor t = random_tensor(rng, {17, 2}, 100.0);
    for (double& v : t.data()) v += 500.0;
    return Pose2D(t);
}

// Collects the leaves the graph actually uses.
std::map<std::string, Tensor> graph_leaves(const Graph& g, const Bindings& b) {
    std::map<std::string, Tensor> out;
    for (const auto& n : g.nodes())
        if (n.op == Op::Parameter || n.op == Op::Input) out[n.name] = *b.find(n.name);
    return out;
}

Tensor swap_rows(const Tensor& t, std::size_t a, std::size_t b) {
    Tensor out = t;
    const std::size_t w = t.shape().back();
    for (std::size_t c = 0; c < w; ++c) std::swap(out.at(a, c), out.at(b, c));
    return out;
}

Tensor swap_both(const Tensor& t, std::size_t a, std::size_t b) {
    Tensor out = swap_rows(t, a, b);
    const std::size_t n = t.dim(0);
    for (std::size_t r = 0; r < n; ++r) std::swap(out.at(r, a), out.at(r, b));
    return out;
}

}  // namespace

TEST_CASE("model: parameter count and initialization") {
    const auto model = RefineModel::initialize(ModelConfig{}, make_skeleton(), Normalization{}, 1);
    CHECK(model.params().scalar_count() < 1500000);
    CHECK(model.params().scalar_count() > 0);
    CHECK(model.params().all_finite());
    for (const auto& [name, t] : model.params().tensors()) {
        if (name.find(".mod.") != std::string::npos || name.starts_with("sgct.out.")) {
            for (double v : t.data()) CHECK(v == 0.0);
        }
    }
    ModelConfig bad;
    bad.channels = 10;
    bad.heads = 4;
    CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("model: initial predictor is deterministic and rooted") {
    const auto model = RefineModel::initialize(small_config(), make_skeleton(), Normalization{}, 2);
    RngStream rng(1, 1);
    const Pose2D x = random_2d(rng);
    const Pose3D a = model.initial_predict(x);
    const Pose3D b = model.initial_predict(x);
    CHECK(a == b);
    CHECK(a.joints().shape() == Shape{17, 3});
    CHECK(a(0, 0) == 0.0);
    CHECK(a(0, 2) == 0.0);
}

TEST_CASE("model: timestep embeddings are distinct and sized") {
    ModelConfig cfg = small_config();
    cfg.time_embed_dim = 16;
    auto model = RefineModel::initialize(cfg, make_skeleton(), Normalization{}, 3);
    std::set<std::vector<double>> seen;
    for (std::size_t t = 1; t <= 1000; ++t) {
        const Tensor e = model.embed_timestep(t);
        REQUIRE(e.size() == 16);
        seen.insert(e.values());
    }
    CHECK(seen.size() == 1000);
    CHECK(model.embed_timestep(17) == model.embed_timestep(17));
}

TEST_CASE("model: fresh SGCT returns y_bar exactly and refine composes") {
    const auto model = RefineModel::initialize(small_config(), make_skeleton(), Normalization{}, 4);
    RngStream rng(2, 2);
    const Pose3D yb = random_pose(rng);
    const Tensor yt = random_tensor(rng, {17, 3});
    const Pose2D x = random_2d(rng);
    const auto inter = model.sgct_forward(std::span(&yb, 1), std::span(&yt, 1), std::span(&x, 1), 50);
    CHECK(max_abs_diff(inter[0], yb.joints()) < 1e-12);

    auto trained = model;
    randomize(trained.params(), 9);
    const auto i2 = trained.sgct_forward(std::span(&yb, 1), std::span(&yt, 1), std::span(&x, 1), 50);
    const Tensor composed = trained.prm_forward(i2[0], yb);
    const Tensor direct = trained.refine(yb, yt, x, 50);
    CHECK(max_abs_diff(composed, direct) < 1e-9);
    CHECK(trained.refine(yb, yt, x, 50) == direct);
}

TEST_CASE("model: PRM gate limits and envelope") {
    auto model = RefineModel::initialize(small_config(), make_skeleton(), Normalization{}, 5);
    randomize(model.params(), 10);
    RngStream rng(3, 3);
    const Pose3D yb = random_pose(rng);
    const Tensor inter = random_tensor(rng, {17, 3}, 200.0);

    const Tensor out = model.prm_forward(inter, yb);
    const Tensor delta = model.prm_gate(inter, yb);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(delta[i] > 0.0);
        CHECK(delta[i] < 1.0);
        CHECK(out[i] >= std::min(inter[i], yb.joints()[i]) - 1e-9);
        CHECK(out[i] <= std::max(inter[i], yb.joints()[i]) + 1e-9);
    }
    // intermediate == y_bar gives y_bar for any gate
    CHECK(max_abs_diff(model.prm_forward(yb.joints(), yb), yb.joints()) < 1e-12);

    auto closed = model;
    for (double& v : closed.params().at("prm.l2.w").data()) v = 0.0;
    for (double& v : closed.params().at("prm.l2.b").data()) v = -60.0;
    CHECK(max_abs_diff(closed.prm_forward(inter, yb), yb.joints()) < 1e-9);
    auto open = closed;
    for (double& v : open.params().at("prm.l2.b").data()) v = 60.0;
    CHECK(max_abs_diff(open.prm_forward(inter, yb), inter) < 1e-9);
}

TEST_CASE("model: SGCT is equivariant to joint permutations") {
    auto model = RefineModel::initialize(small_config(), make_skeleton(), Normalization{}, 6);
    randomize(model.params(), 11);
    RngStream rng(4, 4);
    const Pose3D yb = random_pose(rng);
    const Tensor yt = random_tensor(rng, {17, 3});
    const Pose2D x = random_2d(rng);
    const std::size_t a = 3, b = 12;

    auto permuted = model;
    for (auto& [name, t] : permuted.params().tensors()) {
        if (name.ends_with("joint_embed")) t = swap_rows(t, a, b);
        if (name.ends_with(".adj")) t = swap_both(t, a, b);
    }
    permuted.set_adjacency(swap_both(model.adjacency(), a, b));

    const Pose3D yb_p(swap_rows(yb.joints(), a, b));
    const Tensor yt_p = swap_rows(yt, a, b);
    const Pose2D x_p(swap_rows(x.joints(), a, b));
    const Tensor out = model.sgct_forward(std::span(&yb, 1), std::span(&yt, 1), std::span(&x, 1), 120)[0];
    const Tensor out_p =
        permuted.sgct_forward(std::span(&yb_p, 1), std::span(&yt_p, 1), std::span(&x_p, 1), 120)[0];
    CHECK(max_abs_diff(swap_rows(out, a, b), out_p) < 1e-9);
}

TEST_CASE("model: refine gradients match finite differences") {
    auto model = RefineModel::initialize(small_config(), make_skeleton(), Normalization{}, 7);
    RngStream rng(5, 5);
    for (int point = 0; point < 2; ++point) {
        randomize(model.params(), 20 + static_cast<std::uint64_t>(point));
        Graph g;
        const RefineNodes r = model.build_refine(g, 2);
        const Var loss = g.mean(g.mul(r.refined, r.refined));
        Bindings b;
        model.params().bind(b);
        const std::vector<Pose3D> yb{random_pose(rng), random_pose(rng)};
        const std::vector<Tensor> yt{random_tensor(rng, {17, 3}), random_tensor(rng, {17, 3})};
        const std::vector<Pose2D> x{random_2d(rng), random_2d(rng)};
        const std::vector<std::size_t> ts{30, 170};
        model.bind_refine_inputs(b, yb, yt, x, ts);
        CHECK(gradcheck(g, loss, graph_leaves(g, b)) < 1e-4);
    }
}

TEST_CASE("model: initial predictor gradients match finite differences") {
    auto model = RefineModel::initialize(small_config(), make_skeleton(), Normalization{}, 8);
    randomize(model.params(), 30);
    RngStream rng(6, 6);
    Graph g;
    const InitialNodes n = model.build_initial(g, 2);
    Var scaled = g.bmul(n.pose_mm, g.scalar(1e-3));
    const Var loss = g.mean(g.mul(scaled, scaled));
    Bindings b;
    model.params().bind(b);
    b.set("x", random_tensor(rng, {2, 17, 2}));
    CHECK(gradcheck(g, loss, graph_leaves(g, b)) < 1e-4);
}

TEST_CASE("model: wrong parameter shapes are rejected") {
    const auto model = RefineModel::initialize(small_config(), make_skeleton(), Normalization{}, 9);
    ModelParams p = model.params();
    p.at("prm.l1.w") = Tensor({3, 3});
    CHECK_THROWS_AS(RefineModel(small_config(), make_skeleton(), Normalization{}, p), DataError);
    ModelParams missing = model.params();
    missing.tensors().erase("sgct.in.w");
    CHECK_THROWS_AS(RefineModel(small_config(), make_skeleton(), Normalization{}, missing), DataError);
}
