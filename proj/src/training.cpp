#include "drpose/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "drpose/error.hpp"

namespace drpose {

void TrainConfig::validate(std::size_t joints) const {
    if (epochs < 1) throw UsageError("train.epochs must be >= 1");
    if (batch_size < 1) throw UsageError("train.batch_size must be >= 1");
    if (!(base_lr > 0.0) || !(epoch_decay > 0.0) || !(period_decay > 0.0))
        throw UsageError("learning rate and decay factors must be positive");
    if (decay_period < 1) throw UsageError("train.decay_period must be >= 1");
    if (T < 1) throw UsageError("diffusion T must be >= 1");
    if (joint_weights.size() != joints)
        throw UsageError("joint_weights has " + std::to_string(joint_weights.size()) + " entries, expected " +
                         std::to_string(joints));
    for (double w : joint_weights)
        if (!(w >= 0.0) || !std::isfinite(w)) throw UsageError("joint weights must be finite and non-negative");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
        throw UsageError("invalid optimizer constants");
}

double lr_at(std::size_t epoch, const TrainConfig& c) {
    return c.base_lr * std::pow(c.epoch_decay, static_cast<double>(epoch)) *
           std::pow(c.period_decay, static_cast<double>(epoch / c.decay_period));
}

double weighted_loss(const Tensor& pred, const Tensor& gt, std::span<const double> lambda, double eps) {
    if (pred.shape() != gt.shape() || pred.rank() < 2 || pred.shape().back() != 3)
        throw ShapeError("weighted_loss: shapes " + shape_string(pred.shape()) + " and " + shape_string(gt.shape()));
    const std::size_t n = pred.dim(pred.rank() - 2);
    if (lambda.size() != n) throw ShapeError("weighted_loss: lambda length does not match joint count");
    const std::size_t rows = pred.size() / 3;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double s = eps * eps;
        for (std::size_t c = 0; c < 3; ++c) s += std::pow(pred[r * 3 + c] - gt[r * 3 + c], 2);
        total += lambda[r % n] * std::sqrt(s);
    }
    return total / static_cast<double>(rows);
}

Var weighted_loss_node(Graph& g, Var pred, Var gt, Var lambda, double eps) {
    Var e = g.sub(pred, gt);
    Var sq = g.sum(g.mul(e, e), g.shape(e).size() - 1);
    Var norm = g.sqrt(g.badd(sq, g.scalar(eps * eps)));
    return g.mean(g.bmul(norm, lambda));
}

const char* stage_name(Stage s) { return s == Stage::Pretrain ? "pretrain" : "refine"; }

std::vector<std::string> stage_prefixes(Stage s) {
    if (s == Stage::Pretrain) return {"init."};
    return {"sgct.", "prm."};
}

namespace {

bool trained_by(const std::string& name, Stage s) {
    for (const auto& p : stage_prefixes(s))
        if (name.starts_with(p)) return true;
    return false;
}

}  // namespace

OptimizerState OptimizerState::for_stage(const ModelParams& params, Stage stage) {
    OptimizerState st;
    for (const auto& [name, t] : params.tensors()) {
        if (!trained_by(name, stage)) continue;
        st.m.emplace(name, Tensor(t.shape()));
        st.v.emplace(name, Tensor(t.shape()));
    }
    return st;
}

void OptimizerState::check_against(const ModelParams& params) const {
    for (const auto* moments : {&m, &v}) {
        for (const auto& [name, t] : *moments) {
            auto it = params.tensors().find(name);
            if (it == params.tensors().end()) throw DataError("optimizer state names unknown tensor '" + name + "'");
            if (it->second.shape() != t.shape())
                throw DataError("optimizer state for '" + name + "' has shape " + shape_string(t.shape()) +
                                ", expected " + shape_string(it->second.shape()));
        }
    }
    if (m.size() != v.size()) throw DataError("optimizer first and second moments differ in size");
}

void adam_update(ModelParams& params, OptimizerState& st, const Gradients& grads, double lr, const TrainConfig& c) {
    ++st.step;
    const double b1 = c.adam_beta1, b2 = c.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (auto& [name, m] : st.m) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        Tensor& v = st.v.at(name);
        Tensor& p = params.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + c.adam_eps);
        }
    }
}

namespace {

Tensor stack_joints(std::size_t b, std::size_t n, std::size_t w, auto&& get) {
    Tensor out({b, n, w});
    for (std::size_t i = 0; i < b; ++i) {
        const Tensor& t = get(i);
        std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n * w));
    }
    return out;
}

Var reroot(Graph& g, Var y) {
    const Shape s = g.shape(y);
    return g.sub(y, g.broadcast(g.slice(y, 1, 0, 1), s));
}

void check_loss(double loss, std::size_t batch_index) {
    if (!std::isfinite(loss))
        throw NumericalError("non-finite loss at batch " + std::to_string(batch_index));
}

}  // namespace

double train_step(RefineModel& model, OptimizerState& opt, std::span<const RefineExample> batch,
                  const NoiseSchedule& sched, RngStream& stream, const TrainConfig& config, double lr,
                  std::size_t batch_index) {
    if (batch.empty()) throw UsageError("empty training batch");
    const std::size_t b = batch.size(), n = model.config().joints;
    if (config.joint_weights.size() != n) throw UsageError("joint_weights length does not match the model");

    std::vector<Pose3D> y_bar;
    std::vector<Pose2D> x;
    std::vector<Tensor> y_t;
    std::vector<std::size_t> ts;
    for (const auto& ex : batch) {
        const std::size_t t = static_cast<std::size_t>(stream.uniform_int(1, static_cast<std::int64_t>(sched.T)));
        const Tensor eps = gaussian(stream, {n, 3});
        y_t.push_back(forward_diffuse(model.to_units(ex.y0), t, eps, sched));
        ts.push_back(t);
        y_bar.push_back(ex.y_bar);
        x.push_back(ex.x);
    }

    Graph g;
    const RefineNodes r = model.build_refine(g, b);
    Var target = g.input("y0", {b, n, 3});
    Var lambda = g.constant(Tensor({n}, std::vector<double>(config.joint_weights)));
    Var loss = weighted_loss_node(g, reroot(g, r.refined_mm), target, lambda);

    Bindings bind;
    model.params().bind(bind);
    model.bind_refine_inputs(bind, y_bar, y_t, x, ts);
    bind.set("y0", stack_joints(b, n, 3, [&](std::size_t i) -> const Tensor& { return batch[i].y0.joints(); }));
    const Evaluation ev = evaluate(g, bind);
    const double value = ev[loss].item();
    check_loss(value, batch_index);
    adam_update(model.params(), opt, backward(ev, loss), lr, config);
    return value;
}

double pretrain_step(RefineModel& model, OptimizerState& opt, std::span<const PretrainExample> batch,
                     const TrainConfig& config, double lr, std::size_t batch_index) {
    if (batch.empty()) throw UsageError("empty training batch");
    const std::size_t b = batch.size(), n = model.config().joints;
    Graph g;
    const InitialNodes nodes = model.build_initial(g, b);
    Var target = g.input("y0", {b, n, 3});
    Var lambda = g.constant(Tensor({n}, 1.0));
    Var loss = weighted_loss_node(g, nodes.pose_mm, target, lambda);

    Bindings bind;
    model.params().bind(bind);
    std::vector<Tensor> xs;
    xs.reserve(b);
    for (const auto& ex : batch) xs.push_back(model.normalize_2d(ex.x));
    bind.set("x", stack_joints(b, n, 2, [&](std::size_t i) -> const Tensor& { return xs[i]; }));
    bind.set("y0", stack_joints(b, n, 3, [&](std::size_t i) -> const Tensor& { return batch[i].y0.joints(); }));
    const Evaluation ev = evaluate(g, bind);
    const double value = ev[loss].item();
    check_loss(value, batch_index);
    adam_update(model.params(), opt, backward(ev, loss), lr, config);
    return value;
}

std::string format_epoch_log(const EpochLog& log) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu, %.9g, %.9g, %.9g", log.epoch, log.lr, log.mean_loss, log.val_mpjpe);
    return line;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, Stage stage, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream rng(seed, mix64((static_cast<std::uint64_t>(stage) + 1) << 56 ^ static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

namespace {

template <class Example, class Step>
std::vector<EpochLog> run_epochs(Stage stage, RefineModel& model, OptimizerState& opt, std::span<const Example> data,
                                 const TrainConfig& config, std::size_t start_epoch, const TrainLoopHooks& hooks,
                                 Step&& step) {
    config.validate(model.config().joints);
    if (data.empty()) throw DataError(std::string(stage_name(stage)) + " training set is empty");
    opt.check_against(model.params());
    std::vector<EpochLog> logs;
    std::size_t batch_index = 0;
    const std::size_t batches = (data.size() + config.batch_size - 1) / config.batch_size;
    for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(epoch, config);
        const auto order = epoch_order(data.size(), config.seed, stage, epoch);
        double loss_sum = 0.0;
        for (std::size_t bi = 0; bi < batches; ++bi) {
            const std::size_t begin = bi * config.batch_size;
            const std::size_t end = std::min(data.size(), begin + config.batch_size);
            std::vector<Example> batch;
            batch.reserve(end - begin);
            for (std::size_t k = begin; k < end; ++k) batch.push_back(data[order[k]]);
            batch_index = epoch * batches + bi;
            loss_sum += step(std::span<const Example>(batch), lr, epoch, bi, batch_index);
        }
        EpochLog log{epoch, lr, loss_sum / static_cast<double>(batches), std::numeric_limits<double>::quiet_NaN()};
        if (hooks.validate) log.val_mpjpe = hooks.validate(model);
        logs.push_back(log);
        if (hooks.on_epoch) hooks.on_epoch(log, model, opt);
    }
    return logs;
}

}  // namespace

std::vector<EpochLog> train_refine(RefineModel& model, OptimizerState& opt, std::span<const RefineExample> data,
                                   const NoiseSchedule& sched, const TrainConfig& config, std::size_t start_epoch,
                                   const TrainLoopHooks& hooks) {
    if (sched.T != config.T) throw UsageError("schedule T differs from train.T");
    return run_epochs(Stage::Refine, model, opt, data, config, start_epoch, hooks,
                      [&](std::span<const RefineExample> batch, double lr, std::size_t epoch, std::size_t bi,
                          std::size_t index) {
                          RngStream stream(config.seed, mix64((std::uint64_t{3} << 56) ^ (epoch << 32) ^ bi));
                          return train_step(model, opt, batch, sched, stream, config, lr, index);
                      });
}

std::vector<EpochLog> pretrain_initial(RefineModel& model, OptimizerState& opt, std::span<const PretrainExample> data,
                                       const TrainConfig& config, std::size_t start_epoch,
                                       const TrainLoopHooks& hooks) {
    return run_epochs(Stage::Pretrain, model, opt, data, config, start_epoch, hooks,
                      [&](std::span<const PretrainExample> batch, double lr, std::size_t, std::size_t,
                          std::size_t index) { return pretrain_step(model, opt, batch, config, lr, index); });
}

}  // namespace drpose
