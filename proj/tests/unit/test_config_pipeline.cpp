#include <doctest.h>

#include <cmath>

#include "drpose/config.hpp"
#include "drpose/error.hpp"
#include "drpose/pipeline.hpp"

using namespace drpose;

TEST_CASE("config defaults carry the published hyperparameters") {
    const RunConfig c;
    CHECK(c.train.T == 1000);
    CHECK(c.t_start == 200);
    CHECK(c.offset == 0.008);
    CHECK(c.train.epochs == 30);
    CHECK(c.train.batch_size == 512);
    CHECK(c.train.base_lr == 5e-4);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("config dump and parse round trip") {
    const RunConfig defaults;
    CHECK(parse_config(dump_config(defaults)) == defaults);

    RunConfig c;
    c.model.channels = 48;
    c.train.base_lr = 1.2345678901234567e-4;
    c.train.joint_weights[3] = 0.25;
    c.reverse.start = StartState::PureNoise;
    c.reverse.renoise = Renoise::Posterior;
    c.strategy = Strategy::BestOf;
    c.split = "test";
    c.train.seed = 1234567890123ULL;
    c.model.learnable_adjacency = false;
    c.out_dir = "elsewhere";
    const RunConfig back = parse_config(dump_config(c));
    CHECK(back == c);
    CHECK(dump_config(back) == dump_config(c));
}

TEST_CASE("config parsing rejects unknown keys and bad values") {
    CHECK_THROWS_AS(parse_config("[train]\nepoch = 3\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[bogus]\nepochs = 3\n"), UsageError);
    CHECK_THROWS_AS(parse_config("epochs = 3\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[train]\nepochs = three\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[train]\nepochs = 3x\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[infer]\nstrategy = median\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[model]\nlearnable_adjacency = maybe\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[train\nepochs = 3\n"), UsageError);

    const RunConfig c = parse_config("# comment\n[train]\nepochs = 3   # trailing\n\n[infer]\nstrategy=aggregate\n");
    CHECK(c.train.epochs == 3);
    CHECK(c.strategy == Strategy::Aggregate);

    RunConfig bad = parse_config("[train]\njoint_weights = 1,2\n");
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = parse_config("[diffusion]\nt_start = 1001\n");
    CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("help lists every key with its default") {
    const std::string help = config_help();
    const RunConfig defaults;
    for (const auto& k : config_keys())
        CHECK(help.find(k.name + " = " + config_get(defaults, k.name)) != std::string::npos);
    CHECK(help.find("train.batch_size = 512") != std::string::npos);
}

TEST_CASE("shipped tiny config loads and validates") {
    const RunConfig c = load_config(std::string(DRPOSE_SOURCE_DIR) + "/configs/tiny.cfg");
    CHECK_NOTHROW(c.validate());
    CHECK(c.val_count >= 5000);
    CHECK(c.noise_sigma_px == 3.0);
}

namespace {

DatasetFile two_samples() {
    DatasetFile d = generate_dataset({2, 0.0, 5, 1}, Camera{}, PoseGenConfig::defaults(), make_skeleton());
    return d;
}

Pose3D shifted(const Pose3D& p, double dx, double dy, double dz) {
    Tensor t = p.joints();
    for (std::size_t j = 1; j < p.joint_count(); ++j) {
        t.at(j, 0) += dx;
        t.at(j, 1) += dy;
        t.at(j, 2) += dz;
    }
    return Pose3D(std::move(t));
}

}  // namespace

TEST_CASE("eval grid deltas on a hand-built two-sample input") {
    const DatasetFile d = two_samples();
    // 16 of 17 joints move, the root stays at the origin
    const double f = 16.0 / 17.0;
    GridInput base{1, 1, {}}, multi{2, 5, {}};
    for (std::size_t i = 0; i < 2; ++i) {
        const Pose3D& gt = d.samples[i].gt;
        base.preds.push_back({i, shifted(gt, 12, 0, 0), {shifted(gt, 10, 0, 0)}, shifted(gt, 10, 0, 0)});
        multi.preds.push_back({i, shifted(gt, 12, 0, 0), {shifted(gt, 20, 0, 0), shifted(gt, 0, 0, -6)},
                               shifted(gt, 0, 0, -6)});
    }
    const auto rows = evaluate_grid({base, multi}, d);
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].method == "initial");
    CHECK(rows[0].report.mpjpe == doctest::Approx(12 * f).epsilon(1e-12));
    CHECK(rows[1].method == "baseline");
    CHECK(rows[1].report.mpjpe == doctest::Approx(10 * f).epsilon(1e-12));
    CHECK(rows[1].delta_mm == 0.0);
    CHECK(rows[0].delta_mm == doctest::Approx(2 * f).epsilon(1e-12));

    CHECK(rows[2].method == "single");
    CHECK(rows[2].delta_mm == doctest::Approx(10 * f).epsilon(1e-12));
    CHECK(rows[3].method == "average");
    CHECK(rows[3].delta_mm == doctest::Approx((std::sqrt(109.0) - 10) * f).epsilon(1e-12));
    // a 6 mm depth shift barely moves the projection, a 20 mm lateral one moves it 4 px
    CHECK(rows[4].method == "aggregate");
    CHECK(rows[4].delta_mm == doctest::Approx(-4 * f).epsilon(1e-12));
    CHECK(rows[5].method == "best-of");
    CHECK(rows[5].delta_mm == doctest::Approx(-4 * f).epsilon(1e-12));
    CHECK(rows[5].H == 2);
    CHECK(rows[5].K == 5);

    const std::string text = grid_to_text(rows);
    CHECK(text.find("-3.765") != std::string::npos);
    CHECK(text.find("+9.412") != std::string::npos);
    CHECK(grid_to_json(rows)[4]["method"] == "aggregate");

    // identical predictions: zero error, full PCK
    std::vector<Prediction> exact;
    for (std::size_t i = 0; i < 2; ++i) exact.push_back({i, d.samples[i].gt, {d.samples[i].gt}, d.samples[i].gt});
    const MetricReport r = evaluate_predictions(exact, d);
    CHECK(r.mpjpe == 0.0);
    CHECK(r.pck == 100.0);

    DatasetFile fewer = d;
    fewer.samples.pop_back();
    CHECK_THROWS_AS(evaluate_grid({base}, fewer), DataError);
}

TEST_CASE("predictions JSON round trip and validation") {
    const DatasetFile d = two_samples();
    std::vector<Prediction> preds;
    for (std::size_t i = 0; i < 2; ++i)
        preds.push_back({i, shifted(d.samples[i].gt, 1.0 / 3.0, 0, 0),
                         {d.samples[i].gt, shifted(d.samples[i].gt, 0, 1e-7, 0)}, d.samples[i].gt});
    const auto j = predictions_to_json(preds);
    CHECK(j[0].contains("id"));
    CHECK(j[0]["hypotheses"].size() == 2);
    const auto back = predictions_from_json(nlohmann::json::parse(j.dump()), 17);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].id == preds[i].id);
        CHECK(back[i].initial == preds[i].initial);
        CHECK(back[i].final == preds[i].final);
        CHECK(back[i].hypotheses == preds[i].hypotheses);
    }
    CHECK_THROWS_AS(predictions_from_json(j, 16), DataError);
    CHECK_THROWS_AS(predictions_from_json(nlohmann::json::object(), 17), DataError);
}

TEST_CASE("run_inference output contract and determinism") {
    RunConfig c;
    c.model.channels = 8;
    c.model.heads = 2;
    c.model.blocks = 1;
    c.model.time_embed_dim = 8;
    c.model.initial_layers = 1;
    c.model.prm_hidden = 8;
    c.train.seed = 4;
    const RefineModel model = new_model(c);
    const NoiseSchedule sched = make_schedule(c);
    const DatasetFile d = generate_dataset({6, 3.0, 4, 1}, c.camera, PoseGenConfig::defaults(), make_skeleton());

    c.H = 3;
    c.K = 2;
    c.strategy = Strategy::Aggregate;
    InferOptions o = infer_options(c);
    const auto a = run_inference(model, sched, d, o);
    REQUIRE(a.size() == 6);
    for (const auto& p : a) CHECK(p.hypotheses.size() == 3);
    o.hyp.chunk = 4;
    o.hyp.threads = 3;
    const auto b = run_inference(model, sched, d, o);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].hypotheses == b[i].hypotheses);
        CHECK(a[i].final == b[i].final);
    }

    // single equals aggregate when H = 1
    c.H = 1;
    InferOptions single = infer_options(c);
    single.strategy = Strategy::Single;
    InferOptions agg = single;
    agg.strategy = Strategy::Aggregate;
    const auto s = run_inference(model, sched, d, single);
    const auto g = run_inference(model, sched, d, agg);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i].final == g[i].final);
}
