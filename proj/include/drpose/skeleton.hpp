#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "drpose/rng.hpp"
#include "drpose/tensor.hpp"

namespace drpose {

inline constexpr std::size_t kJointCount = 17;
inline constexpr int kNoParent = -1;

// 17-joint tree rooted at the pelvis (Human3.6M ordering).
struct SkeletonGraph {
    std::size_t joint_count = 0;
    std::vector<int> parent;
    std::vector<std::string> joint_names;
    Tensor adjacency;  // N x N, symmetric, zero diagonal

    std::size_t edge_count() const;
    // D^-1/2 (A + I) D^-1/2
    Tensor normalized_adjacency() const;
};

SkeletonGraph make_skeleton();

// Root-relative 3D joints in millimeters; the root is exactly at the origin.
class Pose3D {
public:
    static constexpr double kMaxExtentMm = 2000.0;

    explicit Pose3D(Tensor joints);
    // Subtracts the root row first, then validates.
    static Pose3D rerooted(Tensor joints);
    static Pose3D zeros(std::size_t joints = kJointCount) { return Pose3D(Tensor({joints, 3})); }

    const Tensor& joints() const noexcept { return joints_; }
    std::size_t joint_count() const noexcept { return joints_.dim(0); }
    double operator()(std::size_t joint, std::size_t axis) const { return joints_.at(joint, axis); }

    friend bool operator==(const Pose3D& a, const Pose3D& b) { return a.joints_ == b.joints_; }

private:
    Tensor joints_;
};

// 2D joints in pixels.
class Pose2D {
public:
    explicit Pose2D(Tensor joints);

    const Tensor& joints() const noexcept { return joints_; }
    std::size_t joint_count() const noexcept { return joints_.dim(0); }
    double operator()(std::size_t joint, std::size_t axis) const { return joints_.at(joint, axis); }

    friend bool operator==(const Pose2D& a, const Pose2D& b) { return a.joints_ == b.joints_; }

private:
    Tensor joints_;
};

// Pinhole camera looking down +z with the pelvis placed `root_depth` mm in front.
// The image spans [0, 2cx] x [0, 2cy].
struct Camera {
    double fx = 1000.0;
    double fy = 1000.0;
    double cx = 500.0;
    double cy = 500.0;
    double root_depth = 5000.0;

    void validate() const;
    friend bool operator==(const Camera&, const Camera&) = default;
};

// Throws DataError if any joint is at or behind the camera plane.
Pose2D project(const Pose3D& pose, const Camera& camera);
// Projection of a single joint position; used by aggregation.
std::array<double, 2> project_point(double x, double y, double z, const Camera& camera);
// Detector-noise tolerance: every joint within 4x the image extent around the principal point.
bool within_image_bounds(const Pose2D& pose, const Camera& camera);

struct AngleRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct BoneSpec {
    double min_length_mm = 0.0;
    double max_length_mm = 0.0;
    AngleRange flex;       // rotation about the local x axis
    AngleRange abduction;  // rotation about the local z axis (mirrored on the right side)
};

struct PoseGenConfig {
    // indexed by child joint; entry 0 (root) unused
    std::array<BoneSpec, kJointCount> bones{};
    AngleRange yaw{-3.141592653589793, 3.141592653589793};
    AngleRange tilt{-0.15, 0.15};

    static PoseGenConfig defaults();
    void validate() const;
};

// Forward kinematics over randomly sampled bone lengths and joint angles.
Pose3D generate_pose(RngStream& stream, const PoseGenConfig& config, const SkeletonGraph& skeleton);

// Adds i.i.d. N(0, sigma^2) pixel noise to every coordinate.
Pose2D perturb2d(const Pose2D& pose, double sigma, RngStream& stream);

std::vector<double> bone_lengths(const Pose3D& pose, const SkeletonGraph& skeleton);

}  // namespace drpose
