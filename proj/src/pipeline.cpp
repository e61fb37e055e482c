#include "drpose/pipeline.hpp"

#include <cstdio>

#include "drpose/error.hpp"
#include "drpose/parallel.hpp"

namespace drpose {

Splits generate_splits(const RunConfig& c) {
    const SkeletonGraph skeleton = make_skeleton();
    const PoseGenConfig gen = PoseGenConfig::defaults();
    auto make = [&](std::size_t count, std::uint64_t split) {
        return generate_dataset({count, c.noise_sigma_px, c.train.seed, split}, c.camera, gen, skeleton);
    };
    return {make(c.train_count, 0), make(c.val_count, 1), make(c.test_count, 2)};
}

NoiseSchedule make_schedule(const RunConfig& c) { return build_cosine_schedule(c.train.T, c.offset); }

RefineModel new_model(const RunConfig& c) {
    return RefineModel::initialize(c.model, make_skeleton(), Normalization::from_camera(c.camera), c.train.seed);
}

TrainConfig pretrain_config(const RunConfig& c) {
    TrainConfig t = c.train;
    t.epochs = c.pretrain_epochs;
    return t;
}

InferOptions infer_options(const RunConfig& c) {
    InferOptions o;
    o.hyp.H = c.H;
    o.hyp.K = c.K;
    o.hyp.t_start = c.t_start;
    o.hyp.key = c.train.seed;
    o.hyp.chunk = c.chunk;
    o.hyp.threads = c.threads;
    o.hyp.reverse = c.reverse;
    o.strategy = c.strategy;
    return o;
}

std::vector<PretrainExample> pretrain_examples(const DatasetFile& data) {
    std::vector<PretrainExample> out;
    out.reserve(data.samples.size());
    for (const auto& s : data.samples) out.push_back({s.gt, s.noisy});
    return out;
}

std::vector<RefineExample> refine_examples(const RefineModel& model, const DatasetFile& data, std::size_t chunk,
                                           std::size_t threads) {
    std::vector<Pose2D> x;
    x.reserve(data.samples.size());
    for (const auto& s : data.samples) x.push_back(s.noisy);
    const auto y_bar = initial_predictions(model, x, chunk, threads);
    std::vector<RefineExample> out;
    out.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out.push_back({data.samples[i].gt, x[i], y_bar[i]});
    return out;
}

std::vector<Pose3D> initial_predictions(const RefineModel& model, const std::vector<Pose2D>& x, std::size_t chunk,
                                        std::size_t threads) {
    if (chunk < 1) throw UsageError("chunk size must be >= 1");
    std::vector<Pose3D> out(x.size(), Pose3D::zeros(model.config().joints));
    const std::size_t chunks = (x.size() + chunk - 1) / chunk;
    parallel_for(chunks, threads, [&](std::size_t c) {
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(x.size(), begin + chunk);
        auto part = model.initial_predict(std::span(x).subspan(begin, end - begin));
        for (std::size_t i = begin; i < end; ++i) out[i] = std::move(part[i - begin]);
    });
    return out;
}

Pose3D apply_strategy(Strategy s, const HypothesisSet& hset, const Pose2D& x, const Camera& camera,
                      const Pose3D* gt) {
    switch (s) {
        case Strategy::Single: return hset.hypotheses.at(0);
        case Strategy::Average: return average(hset);
        case Strategy::Aggregate: return aggregate(hset, x, camera);
        case Strategy::BestOf:
            if (!gt) throw UsageError("best-of needs ground truth");
            return hset.hypotheses.at(best_of(hset, *gt).index);
    }
    throw UsageError("unknown strategy");
}

std::vector<Prediction> run_inference(const RefineModel& model, const NoiseSchedule& sched, const DatasetFile& data,
                                      const InferOptions& options) {
    if (data.joint_count != model.config().joints)
        throw DataError("dataset has " + std::to_string(data.joint_count) + " joints, model expects " +
                        std::to_string(model.config().joints));
    std::vector<Pose2D> x;
    x.reserve(data.samples.size());
    for (const auto& s : data.samples) x.push_back(s.noisy);
    const auto y_bar = initial_predictions(model, x, options.hyp.chunk, options.hyp.threads);

    std::vector<HypothesisRequest> requests;
    requests.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) requests.push_back({y_bar[i], x[i], i});
    const auto sets = generate_hypotheses(requests, model, sched, options.hyp);

    std::vector<Prediction> preds;
    preds.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        preds.push_back({i, y_bar[i], sets[i].hypotheses,
                         apply_strategy(options.strategy, sets[i], x[i], data.camera, &data.samples[i].gt)});
    return preds;
}

namespace {

nlohmann::json pose_json(const Pose3D& p) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t j = 0; j < p.joint_count(); ++j) rows.push_back({p(j, 0), p(j, 1), p(j, 2)});
    return rows;
}

Pose3D pose_from_json(const nlohmann::json& j, std::size_t joints, const std::string& where) {
    if (!j.is_array() || j.size() != joints)
        throw DataError(where + ": expected " + std::to_string(joints) + " joints");
    Tensor t({joints, 3});
    for (std::size_t i = 0; i < joints; ++i) {
        const auto& row = j[i];
        if (!row.is_array() || row.size() != 3) throw DataError(where + ": joint " + std::to_string(i) + " is not [x, y, z]");
        for (std::size_t a = 0; a < 3; ++a) {
            if (!row[a].is_number()) throw DataError(where + ": non-numeric coordinate");
            t.at(i, a) = row[a].get<double>();
        }
    }
    try {
        return Pose3D(std::move(t));
    } catch (const Error& e) {
        throw DataError(where + ": " + e.what());
    }
}

}  // namespace

nlohmann::json predictions_to_json(const std::vector<Prediction>& preds) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : preds) {
        nlohmann::json hyps = nlohmann::json::array();
        for (const auto& h : p.hypotheses) hyps.push_back(pose_json(h));
        out.push_back({{"id", p.id}, {"initial", pose_json(p.initial)}, {"hypotheses", hyps}, {"final", pose_json(p.final)}});
    }
    return out;
}

std::vector<Prediction> predictions_from_json(const nlohmann::json& j, std::size_t joints) {
    if (!j.is_array()) throw DataError("predictions: expected a JSON array");
    std::vector<Prediction> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& r = j[i];
        const std::string where = "predictions[" + std::to_string(i) + "]";
        if (!r.is_object() || !r.contains("id") || !r.contains("hypotheses") || !r.contains("final"))
            throw DataError(where + ": missing id, hypotheses or final");
        Prediction p{r["id"].get<std::size_t>(), Pose3D::zeros(joints), {}, pose_from_json(r["final"], joints, where)};
        if (r.contains("initial")) p.initial = pose_from_json(r["initial"], joints, where);
        if (!r["hypotheses"].is_array()) throw DataError(where + ": hypotheses is not an array");
        for (const auto& h : r["hypotheses"]) p.hypotheses.push_back(pose_from_json(h, joints, where));
        out.push_back(std::move(p));
    }
    return out;
}

MetricReport evaluate_predictions(const std::vector<Prediction>& preds, const DatasetFile& data) {
    if (preds.size() != data.samples.size())
        throw DataError("predictions cover " + std::to_string(preds.size()) + " samples, ground truth has " +
                        std::to_string(data.samples.size()));
    MetricAccumulator acc(data.joint_count);
    for (const auto& p : preds) {
        if (p.id >= data.samples.size()) throw DataError("prediction id " + std::to_string(p.id) + " out of range");
        if (p.final.joint_count() != data.joint_count) throw DataError("prediction joint count does not match ground truth");
        acc.add(p.final, data.samples[p.id].gt);
    }
    return acc.finish();
}

std::string per_joint_csv(const MetricReport& r, const std::vector<std::string>& joint_names) {
    std::string out = "joint,name,mpjpe_mm\n";
    char buf[64];
    for (std::size_t j = 0; j < r.per_joint_mpjpe.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%.6f", r.per_joint_mpjpe[j]);
        out += std::to_string(j) + "," + (j < joint_names.size() ? joint_names[j] : "") + "," + buf + "\n";
    }
    return out;
}

std::vector<GridRow> evaluate_grid(const std::vector<GridInput>& inputs, const DatasetFile& data) {
    if (inputs.empty()) throw UsageError("evaluate_grid needs at least one prediction set");
    for (const auto& in : inputs) {
        if (in.preds.size() != data.samples.size())
            throw DataError("a prediction set covers " + std::to_string(in.preds.size()) +
                            " samples, ground truth has " + std::to_string(data.samples.size()));
        for (const auto& p : in.preds) {
            if (p.id >= data.samples.size()) throw DataError("prediction id out of range");
            if (p.hypotheses.empty()) throw DataError("prediction " + std::to_string(p.id) + " has no hypotheses");
            if (p.hypotheses[0].joint_count() != data.joint_count) throw DataError("joint counts do not match");
        }
    }

    auto rows_for = [&](const GridInput& in, Strategy s) {
        MetricAccumulator acc(data.joint_count);
        for (const auto& p : in.preds) {
            HypothesisSet hset;
            hset.hypotheses = p.hypotheses;
            const Sample& sample = data.samples[p.id];
            acc.add(apply_strategy(s, hset, sample.noisy, data.camera, &sample.gt), sample.gt);
        }
        return acc.finish();
    };

    const GridInput* base = &inputs[0];
    for (const auto& in : inputs)
        if (in.H == 1 && in.K == 1) base = &in;

    std::vector<GridRow> rows;
    {
        MetricAccumulator acc(data.joint_count);
        for (const auto& p : base->preds) acc.add(p.initial, data.samples[p.id].gt);
        rows.push_back({"initial", 0, 0, acc.finish(), 0.0});
    }
    rows.push_back({"baseline", 1, 1, rows_for(*base, Strategy::Single), 0.0});
    for (const auto& in : inputs) {
        if (&in != base) rows.push_back({strategy_name(Strategy::Single), in.H, in.K, rows_for(in, Strategy::Single), 0.0});
        if (in.H == 1) continue;
        for (Strategy s : {Strategy::Average, Strategy::Aggregate, Strategy::BestOf})
            rows.push_back({strategy_name(s), in.H, in.K, rows_for(in, s), 0.0});
    }
    const double b = rows[1].report.mpjpe;
    for (auto& r : rows) r.delta_mm = r.report.mpjpe - b;
    return rows;
}

std::string grid_to_text(const std::vector<GridRow>& rows) {
    std::string out = "method      H    K    MPJPE(mm)   delta(mm)  P-MPJPE(mm)  PCK(%)\n";
    char buf[160];
    for (const auto& r : rows) {
        if (r.method == "initial")
            std::snprintf(buf, sizeof buf, "%-10s  %-3s  %-3s  %9.3f  %10s  %11.3f  %6.2f\n", r.method.c_str(), "-",
                          "-", r.report.mpjpe, "", r.report.p_mpjpe, r.report.pck);
        else
            std::snprintf(buf, sizeof buf, "%-10s  %-3zu  %-3zu  %9.3f  %+10.3f  %11.3f  %6.2f\n", r.method.c_str(), r.H,
                          r.K, r.report.mpjpe, r.delta_mm, r.report.p_mpjpe, r.report.pck);
        out += buf;
    }
    return out;
}

nlohmann::json grid_to_json(const std::vector<GridRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows)
        out.push_back({{"method", r.method}, {"H", r.H}, {"K", r.K}, {"delta_mm", r.delta_mm}, {"report", report_to_json(r.report)}});
    return out;
}

}  // namespace drpose
