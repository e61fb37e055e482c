#include "drpose/model.hpp"

#include <cmath>

#include "drpose/error.hpp"

namespace drpose {

void ModelConfig::validate() const {
    if (joints == 0) throw UsageError("model joints must be positive");
    if (channels == 0 || heads == 0 || channels % heads != 0)
        throw UsageError("model channels must be a positive multiple of heads");
    if (blocks < 1) throw UsageError("model needs at least one SGCT block");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw UsageError("time_embed_dim must be even and >= 2");
    if (mlp_ratio < 1 || initial_layers < 1 || prm_hidden < 1) throw UsageError("model sizes must be positive");
}

Normalization Normalization::from_camera(const Camera& camera) {
    camera.validate();
    return Normalization{1000.0, camera.cx, camera.cy, camera.cx};
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw DataError("missing parameter '" + name + "'");
    return it->second;
}

Tensor& ModelParams::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw DataError("missing parameter '" + name + "'");
    return it->second;
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
}

std::size_t ModelParams::scalar_count(std::string_view prefix) const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors_)
        if (name.starts_with(prefix)) n += t.size();
    return n;
}

bool ModelParams::all_finite() const {
    for (const auto& [_, t] : tensors_)
        if (!t.all_finite()) return false;
    return true;
}

void ModelParams::bind(Bindings& b) const {
    for (const auto& [name, t] : tensors_) b.set_ref(name, t);
}

namespace {

void add_linear(std::map<std::string, Shape>& s, const std::string& name, std::size_t in, std::size_t out) {
    s[name + ".w"] = {in, out};
    s[name + ".b"] = {out};
}

}  // namespace

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
    std::map<std::string, Shape> s;
    const std::size_t n = c.joints, ch = c.channels;
    // initial predictor
    add_linear(s, "init.in", 2, ch);
    s["init.joint_embed"] = {n, ch};
    for (std::size_t l = 0; l < c.initial_layers; ++l) {
        const std::string p = "init.l" + std::to_string(l);
        add_linear(s, p, ch, ch);
        if (c.learnable_adjacency) s[p + ".adj"] = {n, n};
    }
    add_linear(s, "init.out", ch, 3);
    // SGCT
    add_linear(s, "sgct.in", 6, ch);
    s["sgct.joint_embed"] = {n, ch};
    add_linear(s, "sgct.x2d", 2, ch);
    add_linear(s, "sgct.time.l1", c.time_embed_dim, c.time_embed_dim);
    add_linear(s, "sgct.time.l2", c.time_embed_dim, c.time_embed_dim);
    add_linear(s, "sgct.cond.time", c.time_embed_dim, ch);
    add_linear(s, "sgct.cond.pose2d", ch, ch);
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string p = "sgct.b" + std::to_string(b);
        add_linear(s, p + ".mod", ch, 9 * ch);
        add_linear(s, p + ".gc", ch, ch);
        if (c.learnable_adjacency) s[p + ".gc.adj"] = {n, n};
        add_linear(s, p + ".attn.qkv", ch, 3 * ch);
        add_linear(s, p + ".attn.out", ch, ch);
        add_linear(s, p + ".ffn.l1", ch, c.mlp_ratio * ch);
        add_linear(s, p + ".ffn.l2", c.mlp_ratio * ch, ch);
    }
    add_linear(s, "sgct.out", ch, 3);
    // PRM
    add_linear(s, "prm.l1", 6 * n, c.prm_hidden);
    add_linear(s, "prm.l2", c.prm_hidden, 3 * n);
    return s;
}

Tensor timestep_features(std::size_t t, std::size_t dim) {
    const std::size_t half = dim / 2;
    Tensor f({dim});
    for (std::size_t k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        f[k] = std::sin(static_cast<double>(t) * freq);
        f[half + k] = std::cos(static_cast<double>(t) * freq);
    }
    return f;
}

RefineModel::RefineModel(ModelConfig config, SkeletonGraph skeleton, Normalization norm, ModelParams params)
    : config_(config), skeleton_(std::move(skeleton)), norm_(norm), params_(std::move(params)) {
    config_.validate();
    if (skeleton_.joint_count != config_.joints) throw DataError("skeleton joint count does not match model config");
    adjacency_ = skeleton_.normalized_adjacency();
    const auto shapes = parameter_shapes(config_);
    for (const auto& [name, shape] : shapes) {
        auto it = params_.tensors().find(name);
        if (it == params_.tensors().end()) throw DataError("missing parameter '" + name + "'");
        if (it->second.shape() != shape)
            throw DataError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                            shape_string(shape));
    }
    if (params_.tensors().size() != shapes.size()) throw DataError("unexpected extra parameters for this config");
}

RefineModel RefineModel::initialize(const ModelConfig& config, const SkeletonGraph& skeleton, const Normalization& norm,
                                    std::uint64_t seed) {
    config.validate();
    ModelParams params;
    RngStream rng(seed, mix64(0x1417));
    for (const auto& [name, shape] : parameter_shapes(config)) {
        Tensor t(shape, 0.0);
        const bool zero_init = name.ends_with(".b") || name.ends_with(".adj") || name.find(".mod.") != std::string::npos ||
                               name.starts_with("sgct.out.");
        if (!zero_init) {
            double stddev = 0.1;
            if (shape.size() == 2 && !name.ends_with("joint_embed")) {
                stddev = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
            }
            // keeps an untrained predictor well inside the pose extent
            if (name == "init.out.w") stddev *= 0.1;
            rng.fill_normal(t.data());
            for (double& v : t.data()) v *= stddev;
        }
        params.tensors().emplace(name, std::move(t));
    }
    return RefineModel(config, skeleton, norm, std::move(params));
}

void RefineModel::set_adjacency(Tensor normalized) {
    if (normalized.shape() != Shape{config_.joints, config_.joints}) throw ShapeError("adjacency shape mismatch");
    adjacency_ = std::move(normalized);
}

namespace {

Var linear(Graph& g, Var x, const std::string& name, std::size_t in, std::size_t out) {
    auto w = g.parameter(name + ".w", {in, out});
    auto b = g.parameter(name + ".b", {out});
    return g.badd(g.matmul(x, w), b);
}

// Mixing matrix for a graph convolution: fixed normalized adjacency plus an
// optional learnable additive term.
Var mixing(Graph& g, Var adjacency, const std::string& name, const ModelConfig& c) {
    if (!c.learnable_adjacency) return adjacency;
    return g.add(adjacency, g.parameter(name, {c.joints, c.joints}));
}

// Root-relative re-centering inside the graph: y - y[:, 0:1, :].
Var reroot(Graph& g, Var y) {
    const Shape s = g.shape(y);
    return g.sub(y, g.broadcast(g.slice(y, 1, 0, 1), s));
}

}  // namespace

InitialNodes RefineModel::build_initial(Graph& g, std::size_t batch) const {
    const std::size_t n = config_.joints, ch = config_.channels;
    InitialNodes nodes;
    nodes.x = g.input("x", {batch, n, 2});
    Var adjacency = g.constant(adjacency_);
    Var h = g.badd(linear(g, nodes.x, "init.in", 2, ch), g.parameter("init.joint_embed", {n, ch}));
    for (std::size_t l = 0; l < config_.initial_layers; ++l) {
        const std::string p = "init.l" + std::to_string(l);
        Var mix = mixing(g, adjacency, p + ".adj", config_);
        Var z = g.matmul(mix, linear(g, g.layer_norm(h), p, ch, ch));
        h = g.add(h, g.gelu(z));
    }
    Var out = linear(g, g.layer_norm(h), "init.out", ch, 3);
    nodes.pose_mm = reroot(g, g.bmul(out, g.scalar(norm_.pose_scale_mm)));
    return nodes;
}

RefineNodes RefineModel::build_refine(Graph& g, std::size_t batch) const {
    const std::size_t n = config_.joints, ch = config_.channels, heads = config_.heads;
    const std::size_t head_dim = ch / heads, td = config_.time_embed_dim;
    RefineNodes r;
    r.y_bar = g.input("y_bar", {batch, n, 3});
    r.y_t = g.input("y_t", {batch, n, 3});
    r.x = g.input("x", {batch, n, 2});
    r.t_features = g.input("t_features", {batch, td});

    // conditioning: timestep embedding + pooled 2D-pose embedding
    r.time_embedding = linear(g, g.gelu(linear(g, r.t_features, "sgct.time.l1", td, td)), "sgct.time.l2", td, td);
    Var x_tokens = linear(g, r.x, "sgct.x2d", 2, ch);
    Var pooled = g.mean(x_tokens, 1);
    Var cond = g.gelu(g.add(linear(g, r.time_embedding, "sgct.cond.time", td, ch),
                            linear(g, pooled, "sgct.cond.pose2d", ch, ch)));

    // tokens from [y_bar, y_t] plus joint identity and the per-joint 2D embedding
    Var h = linear(g, g.concat({r.y_bar, r.y_t}, 2), "sgct.in", 6, ch);
    h = g.add(g.badd(h, g.parameter("sgct.joint_embed", {n, ch})), x_tokens);

    Var adjacency = g.constant(adjacency_);
    const Shape token_shape{batch, n, ch};
    for (std::size_t b = 0; b < config_.blocks; ++b) {
        const std::string p = "sgct.b" + std::to_string(b);
        // (B, 9C): shift/scale/gate for the three sub-layers
        Var mod = linear(g, cond, p + ".mod", ch, 9 * ch);
        auto chunk = [&](std::size_t i) {
            return g.broadcast(g.reshape(g.slice(mod, 1, i * ch, (i + 1) * ch), {batch, 1, ch}), token_shape);
        };
        auto modulate = [&](Var x, std::size_t i) {
            Var one = g.broadcast(g.scalar(1.0), token_shape);
            return g.add(g.mul(g.layer_norm(x), g.add(one, chunk(i + 1))), chunk(i));
        };

        // graph convolution
        Var a = modulate(h, 0);
        Var mix = mixing(g, adjacency, p + ".gc.adj", config_);
        Var gc = g.gelu(g.matmul(mix, linear(g, a, p + ".gc", ch, ch)));
        h = g.add(h, g.mul(chunk(2), gc));

        // multi-head self-attention over joints
        a = modulate(h, 3);
        Var qkv = g.reshape(linear(g, a, p + ".attn.qkv", ch, 3 * ch), {batch, n, 3, heads, head_dim});
        qkv = g.transpose(qkv, {2, 0, 3, 1, 4});  // (3, B, heads, N, d)
        auto part = [&](std::size_t i) {
            return g.reshape(g.slice(qkv, 0, i, i + 1), {batch * heads, n, head_dim});
        };
        Var q = part(0), k = part(1), v = part(2);
        Var scores = g.bmul(g.matmul(q, g.transpose(k)), g.scalar(1.0 / std::sqrt(static_cast<double>(head_dim))));
        Var attn = g.matmul(g.softmax(scores), v);  // (B*heads, N, d)
        attn = g.reshape(g.transpose(g.reshape(attn, {batch, heads, n, head_dim}), {0, 2, 1, 3}), token_shape);
        h = g.add(h, g.mul(chunk(5), linear(g, attn, p + ".attn.out", ch, ch)));

        // feed-forward
        a = modulate(h, 6);
        const std::size_t hidden = config_.mlp_ratio * ch;
        Var ff = linear(g, g.gelu(linear(g, a, p + ".ffn.l1", ch, hidden)), p + ".ffn.l2", hidden, ch);
        h = g.add(h, g.mul(chunk(8), ff));
    }

    // intermediate pose as a correction on top of the initial pose
    r.intermediate = g.add(r.y_bar, linear(g, g.layer_norm(h), "sgct.out", ch, 3));
    r.refined = prm_subgraph(g, r.intermediate, r.y_bar, &r.delta);
    r.refined_mm = g.bmul(r.refined, g.scalar(norm_.pose_scale_mm));
    return r;
}

Var RefineModel::prm_subgraph(Graph& g, Var intermediate, Var y_bar, Var* delta_out) const {
    const std::size_t n = config_.joints;
    const std::size_t batch = g.shape(y_bar)[0];
    Var in = g.reshape(g.concat({intermediate, y_bar}, 2), {batch, 6 * n});
    Var hidden = g.gelu(linear(g, in, "prm.l1", 6 * n, config_.prm_hidden));
    Var delta = g.reshape(g.sigmoid(linear(g, hidden, "prm.l2", config_.prm_hidden, 3 * n)), {batch, n, 3});
    if (delta_out) *delta_out = delta;
    // delta * intermediate + (1 - delta) * y_bar
    return g.add(y_bar, g.mul(delta, g.sub(intermediate, y_bar)));
}

Tensor RefineModel::normalize_2d(const Pose2D& x) const {
    if (x.joint_count() != config_.joints) throw DataError("2D pose joint count does not match the model");
    Tensor out = x.joints();
    for (std::size_t j = 0; j < out.dim(0); ++j) {
        out.at(j, 0) = (out.at(j, 0) - norm_.cx) / norm_.half_width;
        out.at(j, 1) = (out.at(j, 1) - norm_.cy) / norm_.half_width;
    }
    return out;
}

Tensor RefineModel::to_units(const Pose3D& pose) const {
    if (pose.joint_count() != config_.joints) throw DataError("3D pose joint count does not match the model");
    Tensor out = pose.joints();
    for (double& v : out.data()) v /= norm_.pose_scale_mm;
    return out;
}

namespace {

Tensor stack(const std::vector<Tensor>& parts) {
    Shape s = parts.front().shape();
    s.insert(s.begin(), parts.size());
    std::vector<double> data;
    data.reserve(shape_size(s));
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Tensor(std::move(s), std::move(data));
}

std::vector<Tensor> unstack(const Tensor& t) {
    const std::size_t b = t.dim(0);
    Shape s(t.shape().begin() + 1, t.shape().end());
    const std::size_t w = shape_size(s);
    std::vector<Tensor> out;
    out.reserve(b);
    for (std::size_t i = 0; i < b; ++i)
        out.emplace_back(s, std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(i * w),
                                                t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * w)));
    return out;
}

}  // namespace

std::vector<Pose3D> RefineModel::initial_predict(std::span<const Pose2D> x) const {
    if (x.empty()) return {};
    Graph g;
    const InitialNodes nodes = build_initial(g, x.size());
    std::vector<Tensor> xs;
    xs.reserve(x.size());
    for (const auto& p : x) xs.push_back(normalize_2d(p));
    Bindings b;
    params_.bind(b);
    b.set("x", stack(xs));
    const Evaluation e = evaluate(g, b);
    std::vector<Pose3D> out;
    for (auto& t : unstack(e[nodes.pose_mm])) {
        // the graph already re-roots; exact zeros are restored here
        out.push_back(Pose3D::rerooted(std::move(t)));
    }
    return out;
}

Pose3D RefineModel::initial_predict(const Pose2D& x) const {
    return std::move(initial_predict(std::span<const Pose2D>(&x, 1))[0]);
}

Tensor RefineModel::embed_timestep(std::size_t t) const {
    Graph g;
    const std::size_t td = config_.time_embed_dim;
    Var f = g.input("t_features", {1, td});
    Var e = linear(g, g.gelu(linear(g, f, "sgct.time.l1", td, td)), "sgct.time.l2", td, td);
    Bindings b;
    params_.bind(b);
    b.set("t_features", timestep_features(t, td).reshaped({1, td}));
    return evaluate(g, b)[e].reshaped({td});
}

void RefineModel::bind_refine_inputs(Bindings& b, std::span<const Pose3D> y_bar, std::span<const Tensor> y_t,
                                     std::span<const Pose2D> x, std::span<const std::size_t> t) const {
    const std::size_t n = y_bar.size();
    if (y_t.size() != n || x.size() != n || t.size() != n) throw ShapeError("refine batch inputs differ in length");
    std::vector<Tensor> yb, yt, xs, tf;
    for (std::size_t i = 0; i < n; ++i) {
        yb.push_back(to_units(y_bar[i]));
        if (y_t[i].shape() != Shape{config_.joints, 3})
            throw ShapeError("y_t must be N x 3, got " + shape_string(y_t[i].shape()));
        yt.push_back(y_t[i]);
        xs.push_back(normalize_2d(x[i]));
        tf.push_back(timestep_features(t[i], config_.time_embed_dim));
    }
    b.set("y_bar", stack(yb));
    b.set("y_t", stack(yt));
    b.set("x", stack(xs));
    b.set("t_features", stack(tf));
}

std::vector<Tensor> RefineModel::sgct_forward(std::span<const Pose3D> y_bar, std::span<const Tensor> y_t,
                                              std::span<const Pose2D> x, std::size_t t) const {
    if (y_bar.empty()) return {};
    Graph g;
    const RefineNodes r = build_refine(g, y_bar.size());
    Var inter_mm = g.bmul(r.intermediate, g.scalar(norm_.pose_scale_mm));
    Bindings b;
    params_.bind(b);
    const std::vector<std::size_t> ts(y_bar.size(), t);
    bind_refine_inputs(b, y_bar, y_t, x, ts);
    return unstack(evaluate(g, b)[inter_mm]);
}

Tensor RefineModel::prm_gate(const Tensor& intermediate_mm, const Pose3D& y_bar) const {
    Graph g;
    const std::size_t n = config_.joints;
    Var inter = g.input("intermediate", {1, n, 3});
    Var yb = g.input("y_bar", {1, n, 3});
    Var delta;
    prm_subgraph(g, inter, yb, &delta);
    Bindings b;
    params_.bind(b);
    Tensor iu = intermediate_mm;
    for (double& v : iu.data()) v /= norm_.pose_scale_mm;
    b.set("intermediate", iu.reshaped({1, n, 3}));
    b.set("y_bar", to_units(y_bar).reshaped({1, n, 3}));
    return evaluate(g, b)[delta].reshaped({n, 3});
}

Tensor RefineModel::prm_forward(const Tensor& intermediate_mm, const Pose3D& y_bar) const {
    Graph g;
    const std::size_t n = config_.joints;
    if (intermediate_mm.shape() != Shape{n, 3}) throw ShapeError("intermediate pose must be N x 3");
    Var inter = g.input("intermediate", {1, n, 3});
    Var yb = g.input("y_bar", {1, n, 3});
    Var out = g.bmul(prm_subgraph(g, inter, yb, nullptr), g.scalar(norm_.pose_scale_mm));
    Bindings b;
    params_.bind(b);
    Tensor iu = intermediate_mm;
    for (double& v : iu.data()) v /= norm_.pose_scale_mm;
    b.set("intermediate", iu.reshaped({1, n, 3}));
    b.set("y_bar", to_units(y_bar).reshaped({1, n, 3}));
    return evaluate(g, b)[out].reshaped({n, 3});
}

std::vector<Tensor> RefineModel::refine(std::span<const Pose3D> y_bar, std::span<const Tensor> y_t,
                                        std::span<const Pose2D> x, std::span<const std::size_t> t) const {
    if (y_bar.empty()) return {};
    Graph g;
    const RefineNodes r = build_refine(g, y_bar.size());
    Bindings b;
    params_.bind(b);
    bind_refine_inputs(b, y_bar, y_t, x, t);
    return unstack(evaluate(g, b)[r.refined_mm]);
}

Tensor RefineModel::refine(const Pose3D& y_bar, const Tensor& y_t, const Pose2D& x, std::size_t t) const {
    return std::move(refine(std::span<const Pose3D>(&y_bar, 1), std::span<const Tensor>(&y_t, 1),
                            std::span<const Pose2D>(&x, 1), std::span<const std::size_t>(&t, 1))[0]);
}

std::vector<Tensor> RefineModel::denoise(std::span<const Pose3D> y_bar, std::span<const Tensor> y_t,
                                         std::span<const Pose2D> x, std::size_t t) const {
    const std::vector<std::size_t> ts(y_bar.size(), t);
    return refine(y_bar, y_t, x, ts);
}

}  // namespace drpose
