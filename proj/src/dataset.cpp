#include "drpose/dataset.hpp"

#include <cstring>
#include <optional>

#include "binary_io.hpp"
#include "drpose/error.hpp"

namespace drpose {

namespace {

using io::ByteReader;
using io::ByteWriter;

constexpr char kMagic[4] = {'D', 'R', 'P', 'Z'};

Tensor read_block(ByteReader& r, std::size_t rows, std::size_t cols) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = r.f64();
    return Tensor::from_external({rows, cols}, std::move(v));
}

void write_block(ByteWriter& w, const Tensor& t) {
    for (double v : t.data()) w.f64(v);
}

nlohmann::json tensor_rows(const Tensor& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < t.dim(0); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < t.dim(1); ++c) row.push_back(t.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void dataset_write(const std::filesystem::path& path, const DatasetFile& d) {
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(d.version);
    w.u32(static_cast<std::uint32_t>(d.joint_count));
    w.u64(d.samples.size());
    w.f64(d.camera.fx);
    w.f64(d.camera.fy);
    w.f64(d.camera.cx);
    w.f64(d.camera.cy);
    w.f64(d.camera.root_depth);
    w.u64(d.seed);
    for (const Sample& s : d.samples) {
        if (s.gt.joint_count() != d.joint_count || s.clean.joint_count() != d.joint_count ||
            s.noisy.joint_count() != d.joint_count)
            throw DataError(path.string() + ": sample joint count differs from header");
        write_block(w, s.gt.joints());
        write_block(w, s.clean.joints());
        write_block(w, s.noisy.joints());
    }
    io::write_file(path, w.bytes());
}

DatasetFile dataset_read(const std::filesystem::path& path) {
    ByteReader r(io::read_file(path), path.string());

    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(path.string() + ": bad magic bytes (not a DRPZ dataset)");
    DatasetFile d;
    d.version = r.u32();
    if (d.version != DatasetFile::kVersion)
        throw DataError(path.string() + ": unsupported dataset version " + std::to_string(d.version));
    d.joint_count = r.u32();
    if (d.joint_count == 0) throw DataError(path.string() + ": joint count is zero");
    const std::uint64_t count = r.u64();
    d.camera.fx = r.f64();
    d.camera.fy = r.f64();
    d.camera.cx = r.f64();
    d.camera.cy = r.f64();
    d.camera.root_depth = r.f64();
    d.camera.validate();
    d.seed = r.u64();

    const std::size_t per_sample = d.joint_count * 7 * sizeof(double);
    if (r.remaining() != count * per_sample)
        throw DataError(path.string() + ": expected " + std::to_string(count) + " samples, file size disagrees");
    d.samples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Tensor gt_raw = read_block(r, d.joint_count, 3);
        Tensor clean_raw = read_block(r, d.joint_count, 2);
        Tensor noisy_raw = read_block(r, d.joint_count, 2);
        std::optional<Pose3D> gt;
        std::optional<Pose2D> clean, noisy;
        try {
            gt.emplace(std::move(gt_raw));
            clean.emplace(std::move(clean_raw));
            noisy.emplace(std::move(noisy_raw));
        } catch (const Error& e) {
            throw DataError(path.string() + ": sample " + std::to_string(i) + ": " + e.what());
        }
        if (!within_image_bounds(*noisy, d.camera))
            throw DataError(path.string() + ": sample " + std::to_string(i) + " lies outside the image bounds");
        d.samples.push_back(Sample{std::move(*gt), std::move(*clean), std::move(*noisy)});
    }
    return d;
}

nlohmann::json dataset_to_json(const DatasetFile& d) {
    nlohmann::json j;
    j["magic"] = "DRPZ";
    j["version"] = d.version;
    j["N"] = d.joint_count;
    j["sample_count"] = d.samples.size();
    j["camera"] = {d.camera.fx, d.camera.fy, d.camera.cx, d.camera.cy, d.camera.root_depth};
    j["seed"] = d.seed;
    nlohmann::json samples = nlohmann::json::array();
    for (const Sample& s : d.samples) {
        samples.push_back({{"gt", tensor_rows(s.gt.joints())},
                           {"clean", tensor_rows(s.clean.joints())},
                           {"noisy", tensor_rows(s.noisy.joints())}});
    }
    j["samples"] = std::move(samples);
    return j;
}

std::uint64_t sample_stream_id(std::uint64_t split, std::uint64_t index) { return mix64((split << 48) ^ index); }

DatasetFile generate_dataset(const DatasetSpec& spec, const Camera& camera, const PoseGenConfig& pose_config,
                             const SkeletonGraph& skeleton) {
    camera.validate();
    pose_config.validate();
    DatasetFile d;
    d.joint_count = skeleton.joint_count;
    d.camera = camera;
    d.seed = spec.seed;
    d.samples.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        RngStream stream(spec.seed, sample_stream_id(spec.split, i));
        Pose3D gt = generate_pose(stream, pose_config, skeleton);
        Pose2D clean = project(gt, camera);
        Pose2D noisy = perturb2d(clean, spec.noise_sigma_px, stream);
        d.samples.push_back(Sample{std::move(gt), std::move(clean), std::move(noisy)});
    }
    return d;
}

}  // namespace drpose
