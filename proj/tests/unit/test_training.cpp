#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "drpose/checkpoint.hpp"
#include "drpose/dataset.hpp"
#include "drpose/error.hpp"
#include "drpose/metrics.hpp"
#include "drpose/training.hpp"
#include "support/gradcheck.hpp"

using namespace drpose;
using drpose::testing::gradcheck;
using drpose::testing::random_tensor;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.channels = 8;
    c.heads = 2;
    c.blocks = 1;
    c.time_embed_dim = 8;
    c.initial_layers = 2;
    c.prm_hidden = 16;
    return c;
}

struct Fixture {
    SkeletonGraph skeleton = make_skeleton();
    Camera camera;
    DatasetFile data = generate_dataset({64, 3.0, 5, 0}, camera, PoseGenConfig::defaults(), skeleton);
    RefineModel model = RefineModel::initialize(tiny_model(), skeleton, Normalization::from_camera(camera), 3);

    std::vector<PretrainExample> pretrain() const {
        std::vector<PretrainExample> out;
        for (const auto& s : data.samples) out.push_back({s.gt, s.noisy});
        return out;
    }
    std::vector<RefineExample> refine() const {
        std::vector<RefineExample> out;
        for (const auto& s : data.samples) out.push_back({s.gt, s.noisy, model.initial_predict(s.noisy)});
        return out;
    }
};

}  // namespace

TEST_CASE("lr_at closed form and default hyperparameters") {
    const TrainConfig c;
    CHECK(c.epochs == 30);
    CHECK(c.batch_size == 512);
    CHECK(c.base_lr == 5e-4);
    CHECK(c.T == 1000);
    CHECK(lr_at(0, c) == 0.0005);
    CHECK(std::abs(lr_at(1, c) - 0.000475) < 1e-18);
    CHECK(std::abs(lr_at(5, c) - 0.000193445234375) < 1e-17);
    CHECK(std::abs(lr_at(29, c) - 3.530242828008841561532e-6) < 1e-19);
    CHECK_NOTHROW(c.validate(17));
    TrainConfig bad;
    bad.joint_weights.pop_back();
    CHECK_THROWS_AS(bad.validate(17), UsageError);
}

TEST_CASE("weighted_loss examples and homogeneity") {
    const Tensor pred = Tensor::matrix({{3, 4, 0}, {1, 1, 1}});
    const Tensor gt = Tensor::matrix({{0, 0, 0}, {1, 1, 1}});
    const std::vector<double> ones{1, 1}, twozero{2, 0};
    CHECK(weighted_loss(gt, gt, ones) == doctest::Approx(1e-8));
    // the exact joint still contributes the 1e-8 smoothing term
    CHECK(std::abs(weighted_loss(pred, gt, ones) - 2.5) < 1e-8);
    CHECK(std::abs(weighted_loss(pred, gt, twozero) - 5.0) < 1e-12);
    const std::vector<double> doubled{2, 2};
    CHECK(weighted_loss(pred, gt, doubled) == doctest::Approx(2 * weighted_loss(pred, gt, ones)).epsilon(1e-15));
    // mpjpe is the unsmoothed unit-weight loss
    RngStream rng(1, 1);
    const Pose3D a = Pose3D::rerooted(random_tensor(rng, {17, 3}, 100));
    const Pose3D b = Pose3D::rerooted(random_tensor(rng, {17, 3}, 100));
    const std::vector<double> w(17, 1.0);
    CHECK(weighted_loss(a.joints(), b.joints(), w, 0.0) == doctest::Approx(mpjpe(a, b)).epsilon(1e-14));
}

TEST_CASE("weighted_loss graph gradient, including near-zero errors") {
    RngStream rng(2, 2);
    Graph g;
    Var p = g.input("pred", {2, 4, 3});
    Var t = g.input("gt", {2, 4, 3});
    Var l = g.input("lambda", {4});
    Var loss = weighted_loss_node(g, p, t, l);
    Tensor gt = random_tensor(rng, {2, 4, 3});
    Tensor pred = gt;
    for (std::size_t i = 3; i < pred.size(); ++i) pred[i] += rng.normal();
    // joint 0 of sample 0 sits at ~1e-3 error
    pred[0] += 1e-3;
    const Tensor lambda = Tensor::vector({1.0, 2.0, 0.5, 1.5});
    CHECK(gradcheck(g, loss, {{"pred", pred}, {"gt", gt}, {"lambda", lambda}}, 1e-7) < 1e-4);

    Bindings b;
    b.set("pred", pred);
    b.set("gt", gt);
    b.set("lambda", lambda);
    const double direct = weighted_loss(pred, gt, lambda.values());
    CHECK(evaluate(g, b)[loss].item() == doctest::Approx(direct).epsilon(1e-14));

    // exact zero error keeps a finite zero gradient
    b.set("pred", gt);
    const Gradients grads = backward(evaluate(g, b), loss);
    CHECK(grads.at("pred").all_finite());
}

TEST_CASE("train_step: zero lr is a no-op, determinism, finite loss") {
    Fixture f;
    const auto data = f.refine();
    const NoiseSchedule sched = build_cosine_schedule(1000, 0.008);
    TrainConfig cfg;

    RefineModel m = f.model;
    OptimizerState opt = OptimizerState::for_stage(m.params(), Stage::Refine);
    RngStream s(1, 1);
    const double loss = train_step(m, opt, std::span(data).first(16), sched, s, cfg, 0.0);
    CHECK(std::isfinite(loss));
    CHECK(m.params() == f.model.params());

    RefineModel a = f.model, b = f.model;
    OptimizerState oa = OptimizerState::for_stage(a.params(), Stage::Refine), ob = oa;
    RngStream sa(4, 4), sb(4, 4);
    for (int i = 0; i < 3; ++i) {
        train_step(a, oa, std::span(data).first(16), sched, sa, cfg, 1e-3);
        train_step(b, ob, std::span(data).first(16), sched, sb, cfg, 1e-3);
    }
    CHECK(a.params() == b.params());
    CHECK(oa == ob);
    CHECK_FALSE(a.params() == f.model.params());
    // the refine stage leaves the initial predictor untouched
    for (const auto& [name, t] : a.params().tensors())
        if (name.starts_with("init.")) CHECK(t == f.model.params().at(name));
}

TEST_CASE("train_step: loss decreases on a fixed batch") {
    Fixture f;
    const auto data = f.refine();
    const NoiseSchedule sched = build_cosine_schedule(1000, 0.008);
    TrainConfig cfg;
    RefineModel m = f.model;
    OptimizerState opt = OptimizerState::for_stage(m.params(), Stage::Refine);
    double first = 0, last = 0;
    for (int i = 0; i < 50; ++i) {
        RngStream s(9, 9);  // same t and noise every step
        const double loss = train_step(m, opt, std::span(data).first(32), sched, s, cfg, 3e-3);
        REQUIRE(std::isfinite(loss));
        if (i < 5) first += loss;
        if (i >= 45) last += loss;
    }
    CHECK(last < first);
}

TEST_CASE("train_step: non-finite loss names the batch") {
    Fixture f;
    auto data = f.refine();
    const NoiseSchedule sched = build_cosine_schedule(1000, 0.008);
    RefineModel m = f.model;
    m.params().at("prm.l1.w")[0] = std::numeric_limits<double>::infinity();
    OptimizerState opt = OptimizerState::for_stage(m.params(), Stage::Refine);
    RngStream s(1, 1);
    try {
        train_step(m, opt, std::span(data).first(4), sched, s, TrainConfig{}, 1e-3, 17);
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("batch 17") != std::string::npos);
    }
}

TEST_CASE("pretraining beats the mean pose and resumes exactly") {
    Fixture f;
    const auto data = f.pretrain();
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 16;
    cfg.base_lr = 3e-3;

    RefineModel full = f.model;
    OptimizerState opt = OptimizerState::for_stage(full.params(), Stage::Pretrain);
    const auto logs = pretrain_initial(full, opt, data, cfg, 0);
    REQUIRE(logs.size() == 8);
    std::size_t non_increasing = 0;
    for (std::size_t i = 1; i < logs.size(); ++i) non_increasing += logs[i].mean_loss <= logs[i - 1].mean_loss;
    CHECK(non_increasing >= 6);
    for (const auto& [name, t] : full.params().tensors())
        if (!name.starts_with("init.")) CHECK(t == f.model.params().at(name));

    // mean-pose baseline on the training set
    Tensor mean({17, 3});
    for (const auto& s : f.data.samples)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s.gt.joints()[i] / 64.0;
    double base = 0, model = 0;
    for (const auto& s : f.data.samples) {
        base += mpjpe(Pose3D(mean), s.gt);
        model += mpjpe(full.initial_predict(s.noisy), s.gt);
    }
    CHECK(model < base);

    // interrupt after 3 epochs, checkpoint, resume
    RefineModel part = f.model;
    OptimizerState popt = OptimizerState::for_stage(part.params(), Stage::Pretrain);
    TrainConfig first = cfg;
    first.epochs = 3;
    pretrain_initial(part, popt, data, first, 0);
    const auto path = std::filesystem::temp_directory_path() / "drpose_test_resume.drpm";
    save_checkpoint(path, {part.config(), part.normalization(), part.params(), 3, Stage::Pretrain, popt});
    const Checkpoint loaded = load_checkpoint(path);
    RefineModel resumed = model_from_checkpoint(loaded, f.skeleton);
    OptimizerState ropt = *loaded.optimizer;
    const auto rest = pretrain_initial(resumed, ropt, data, cfg, loaded.epochs_done);
    CHECK(rest.size() == 5);
    CHECK(resumed.params() == full.params());
    CHECK(rest.back().mean_loss == logs.back().mean_loss);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint round trip and validation") {
    Fixture f;
    const auto path = std::filesystem::temp_directory_path() / "drpose_test_ckpt.drpm";
    Checkpoint c{f.model.config(), f.model.normalization(), f.model.params(), 0, Stage::Refine, std::nullopt};
    save_checkpoint(path, c);
    const Checkpoint r = load_checkpoint(path);
    CHECK(r.config == c.config);
    CHECK(r.norm == c.norm);
    CHECK(r.params == c.params);
    CHECK(r.stage == Stage::Refine);
    CHECK_FALSE(r.optimizer.has_value());
    CHECK_NOTHROW(model_from_checkpoint(r, f.skeleton));

    ModelConfig other = f.model.config();
    other.joints = 16;
    try {
        load_checkpoint(path, &other);
        FAIL("expected a shape mismatch");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("tensor '") != std::string::npos);
    }

    c.optimizer = OptimizerState::for_stage(f.model.params(), Stage::Refine);
    c.optimizer->step = 12;
    save_checkpoint(path, c);
    const Checkpoint ro = load_checkpoint(path);
    REQUIRE(ro.optimizer.has_value());
    CHECK(*ro.optimizer == *c.optimizer);

    {
        std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
        io.seekp(4);
        const char bad[4] = {9, 0, 0, 0};
        io.write(bad, 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("epoch order is a permutation and depends on the epoch") {
    const auto a = epoch_order(100, 1, Stage::Refine, 0);
    const auto b = epoch_order(100, 1, Stage::Refine, 1);
    std::vector<std::size_t> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 100; ++i) CHECK(sorted[i] == i);
    CHECK(a != b);
    CHECK(a == epoch_order(100, 1, Stage::Refine, 0));
}
