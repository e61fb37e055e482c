#include "drpose/checkpoint.hpp"

#include "binary_io.hpp"
#include "drpose/error.hpp"

namespace drpose {

namespace {

using io::ByteReader;
using io::ByteWriter;

constexpr char kMagic[4] = {'D', 'R', 'P', 'M'};

void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
}

void write_tensors(ByteWriter& w, const std::map<std::string, Tensor>& tensors) {
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) write_tensor(w, name, t);
}

std::map<std::string, Tensor> read_tensors(ByteReader& r, const std::string& origin) {
    std::map<std::string, Tensor> out;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = r.u32();
        if (len > 4096) throw DataError(origin + ": implausible tensor name length");
        std::string name(len, '\0');
        r.raw(name.data(), len);
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw DataError(origin + ": tensor '" + name + "' has implausible rank");
        Shape shape(rank);
        for (auto& d : shape) {
            d = r.u64();
            if (d == 0 || d > (std::uint64_t{1} << 32)) throw DataError(origin + ": tensor '" + name + "' has bad shape");
        }
        const std::size_t size = shape_size(shape);
        if (size * sizeof(double) > r.remaining()) throw DataError(origin + ": truncated file");
        std::vector<double> data(size);
        for (double& v : data) v = r.f64();
        try {
            out.emplace(name, Tensor::from_external(std::move(shape), std::move(data)));
        } catch (const Error& e) {
            throw DataError(origin + ": tensor '" + name + "': " + e.what());
        }
    }
    return out;
}

void check_shapes(const std::map<std::string, Tensor>& tensors, const ModelConfig& config, const std::string& origin) {
    const auto expected = parameter_shapes(config);
    for (const auto& [name, shape] : expected) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError(origin + ": missing tensor '" + name + "'");
        if (it->second.shape() != shape)
            throw DataError(origin + ": tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                            ", expected " + shape_string(shape));
    }
    for (const auto& [name, _] : tensors)
        if (!expected.count(name)) throw DataError(origin + ": unexpected tensor '" + name + "'");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(Checkpoint::kVersion);
    const ModelConfig& m = c.config;
    for (std::size_t v : {m.joints, m.channels, m.blocks, m.heads, m.time_embed_dim, m.mlp_ratio, m.initial_layers,
                          m.prm_hidden})
        w.u64(v);
    w.raw(m.learnable_adjacency ? "\1" : "\0", 1);
    for (double v : {c.norm.pose_scale_mm, c.norm.cx, c.norm.cy, c.norm.half_width}) w.f64(v);
    const char stage = c.stage == Stage::Pretrain ? 0 : 1;
    w.raw(&stage, 1);
    w.u32(c.epochs_done);
    write_tensors(w, c.params.tensors());
    w.raw(c.optimizer ? "\1" : "\0", 1);
    if (c.optimizer) {
        w.u64(c.optimizer->step);
        write_tensors(w, c.optimizer->m);
        write_tensors(w, c.optimizer->v);
    }
    io::write_file(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
    const std::string origin = path.string();
    ByteReader r(io::read_file(path), origin);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(origin + ": bad magic bytes (not a DRPM checkpoint)");
    const std::uint32_t version = r.u32();
    if (version != Checkpoint::kVersion)
        throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version));

    Checkpoint c;
    ModelConfig& m = c.config;
    for (std::size_t* v : {&m.joints, &m.channels, &m.blocks, &m.heads, &m.time_embed_dim, &m.mlp_ratio,
                           &m.initial_layers, &m.prm_hidden})
        *v = r.u64();
    char flag = 0;
    r.raw(&flag, 1);
    m.learnable_adjacency = flag != 0;
    try {
        m.validate();
    } catch (const Error& e) {
        throw DataError(origin + ": stored model config is invalid: " + e.what());
    }
    for (double* v : {&c.norm.pose_scale_mm, &c.norm.cx, &c.norm.cy, &c.norm.half_width}) *v = r.f64();
    char stage = 0;
    r.raw(&stage, 1);
    if (stage != 0 && stage != 1) throw DataError(origin + ": unknown training stage tag");
    c.stage = stage == 0 ? Stage::Pretrain : Stage::Refine;
    c.epochs_done = r.u32();

    c.params.tensors() = read_tensors(r, origin);
    check_shapes(c.params.tensors(), c.config, origin);
    if (expected) {
        try {
            check_shapes(c.params.tensors(), *expected, origin);
        } catch (const DataError& e) {
            throw DataError(std::string(e.what()) + " (checkpoint does not match the configured model)");
        }
    }

    r.raw(&flag, 1);
    if (flag) {
        OptimizerState opt;
        opt.step = r.u64();
        opt.m = read_tensors(r, origin);
        opt.v = read_tensors(r, origin);
        opt.check_against(c.params);
        c.optimizer = std::move(opt);
    }
    if (r.remaining() != 0) throw DataError(origin + ": trailing bytes after checkpoint");
    return c;
}

RefineModel model_from_checkpoint(const Checkpoint& ckpt, const SkeletonGraph& skeleton) {
    return RefineModel(ckpt.config, skeleton, ckpt.norm, ckpt.params);
}

}  // namespace drpose
