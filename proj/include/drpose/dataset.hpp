#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "drpose/skeleton.hpp"

namespace drpose {

struct Sample {
    Pose3D gt;
    Pose2D clean;
    Pose2D noisy;
};

struct DatasetFile {
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t version = kVersion;
    std::size_t joint_count = kJointCount;
    Camera camera;
    std::uint64_t seed = 0;
    std::vector<Sample> samples;
};

// Little-endian binary layout:
//   "DRPZ" | u32 version | u32 N | u64 count | 5 x f64 camera | u64 seed |
//   count x (N*3 f64 gt, N*2 f64 clean, N*2 f64 noisy)
void dataset_write(const std::filesystem::path& path, const DatasetFile& dataset);
DatasetFile dataset_read(const std::filesystem::path& path);

nlohmann::json dataset_to_json(const DatasetFile& dataset);

struct DatasetSpec {
    std::size_t count = 0;
    double noise_sigma_px = 3.0;
    std::uint64_t seed = 0;
    std::uint64_t split = 0;  // keeps train/val/test streams disjoint
};

// Each sample draws from its own stream (seed, mix64(split, index)).
DatasetFile generate_dataset(const DatasetSpec& spec, const Camera& camera, const PoseGenConfig& pose_config,
                             const SkeletonGraph& skeleton);

std::uint64_t sample_stream_id(std::uint64_t split, std::uint64_t index);

}  // namespace drpose
