#include "drpose/skeleton.hpp"

#include <cmath>

#include "drpose/error.hpp"
#include "drpose/svd3.hpp"

namespace drpose {

namespace {

constexpr std::array<int, kJointCount> kParents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};

const std::array<const char*, kJointCount> kNames = {
    "pelvis",     "right_hip",      "right_knee", "right_ankle", "left_hip",       "left_knee",
    "left_ankle", "spine",          "thorax",     "neck",        "head",           "left_shoulder",
    "left_elbow", "left_wrist",     "right_shoulder", "right_elbow", "right_wrist"};

// Bone direction in the parent frame at rest: x to the subject's left, y down, z forward.
constexpr std::array<std::array<double, 3>, kJointCount> kRestDirection = {{
    {0, 0, 0},
    {-1, 0, 0}, {0, 1, 0}, {0, 1, 0},
    {1, 0, 0},  {0, 1, 0}, {0, 1, 0},
    {0, -1, 0}, {0, -1, 0}, {0, -1, 0}, {0, -1, 0},
    {1, 0, 0},  {0, 1, 0}, {0, 1, 0},
    {-1, 0, 0}, {0, 1, 0}, {0, 1, 0},
}};

// Abduction is mirrored so positive values move limbs outward on both sides.
constexpr std::array<double, kJointCount> kSide = {1, 1, 1, 1, -1, -1, -1, 1, 1, 1, 1, -1, -1, -1, 1, 1, 1};

Mat3 rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {1, 0, 0, 0, c, -s, 0, s, c};
}

Mat3 rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c, 0, s, 0, 1, 0, -s, 0, c};
}

Mat3 rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c, -s, 0, s, c, 0, 0, 0, 1};
}

double sample(RngStream& s, const AngleRange& r) { return r.lo == r.hi ? r.lo : s.uniform(r.lo, r.hi); }

void check_shape(const Tensor& t, std::size_t cols, const char* what) {
    if (t.rank() != 2 || t.dim(1) != cols || t.dim(0) == 0)
        throw ShapeError(std::string(what) + " expects an N x " + std::to_string(cols) + " tensor, got " +
                         shape_string(t.shape()));
    if (!t.all_finite()) throw NumericalError(std::string(what) + " has non-finite coordinates");
}

}  // namespace

std::size_t SkeletonGraph::edge_count() const {
    std::size_t e = 0;
    for (int p : parent) e += p != kNoParent;
    return e;
}

Tensor SkeletonGraph::normalized_adjacency() const {
    const std::size_t n = joint_count;
    std::vector<double> degree(n, 1.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) degree[i] += adjacency.at(i, j);
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double a = adjacency.at(i, j) + (i == j ? 1.0 : 0.0);
            out.at(i, j) = a / std::sqrt(degree[i] * degree[j]);
        }
    }
    return out;
}

SkeletonGraph make_skeleton() {
    SkeletonGraph g;
    g.joint_count = kJointCount;
    g.parent.assign(kParents.begin(), kParents.end());
    g.joint_names.assign(kNames.begin(), kNames.end());
    g.adjacency = Tensor({kJointCount, kJointCount});
    for (std::size_t i = 0; i < kJointCount; ++i) {
        if (kParents[i] == kNoParent) continue;
        const auto p = static_cast<std::size_t>(kParents[i]);
        g.adjacency.at(i, p) = 1.0;
        g.adjacency.at(p, i) = 1.0;
    }
    return g;
}

Pose3D::Pose3D(Tensor joints) : joints_(std::move(joints)) {
    check_shape(joints_, 3, "Pose3D");
    if (joints_[0] != 0.0 || joints_[1] != 0.0 || joints_[2] != 0.0)
        throw DataError("Pose3D root joint must be at the origin");
    for (double v : joints_.data()) {
        if (std::abs(v) >= kMaxExtentMm) throw NumericalError("Pose3D coordinate exceeds 2000 mm");
    }
}

Pose3D Pose3D::rerooted(Tensor joints) {
    if (joints.rank() == 2 && joints.dim(1) == 3) {
        const double rx = joints[0], ry = joints[1], rz = joints[2];
        for (std::size_t j = 0; j < joints.dim(0); ++j) {
            joints.at(j, 0) -= rx;
            joints.at(j, 1) -= ry;
            joints.at(j, 2) -= rz;
        }
    }
    return Pose3D(std::move(joints));
}

Pose2D::Pose2D(Tensor joints) : joints_(std::move(joints)) { check_shape(joints_, 2, "Pose2D"); }

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw DataError("camera focal lengths must be positive");
    if (!(cx > 0.0) || !(cy > 0.0)) throw DataError("camera principal point must be positive");
    if (!(root_depth > Pose3D::kMaxExtentMm)) throw DataError("camera root depth must exceed the maximum pose extent");
}

std::array<double, 2> project_point(double x, double y, double z, const Camera& camera) {
    const double depth = z + camera.root_depth;
    if (!(depth > 0.0)) throw DataError("joint at or behind the camera plane");
    return {camera.fx * x / depth + camera.cx, camera.fy * y / depth + camera.cy};
}

Pose2D project(const Pose3D& pose, const Camera& camera) {
    const std::size_t n = pose.joint_count();
    Tensor out({n, 2});
    for (std::size_t j = 0; j < n; ++j) {
        const auto uv = project_point(pose(j, 0), pose(j, 1), pose(j, 2), camera);
        out.at(j, 0) = uv[0];
        out.at(j, 1) = uv[1];
    }
    return Pose2D(std::move(out));
}

bool within_image_bounds(const Pose2D& pose, const Camera& camera) {
    for (std::size_t j = 0; j < pose.joint_count(); ++j) {
        if (std::abs(pose(j, 0) - camera.cx) > 4.0 * camera.cx) return false;
        if (std::abs(pose(j, 1) - camera.cy) > 4.0 * camera.cy) return false;
    }
    return true;
}

PoseGenConfig PoseGenConfig::defaults() {
    PoseGenConfig c;
    auto bone = [&](std::size_t j, double lmin, double lmax, AngleRange flex, AngleRange abd) {
        c.bones[j] = BoneSpec{lmin, lmax, flex, abd};
    };
    // legs
    bone(1, 110, 140, {-0.1, 0.1}, {-0.1, 0.1});
    bone(4, 110, 140, {-0.1, 0.1}, {-0.1, 0.1});
    bone(2, 400, 470, {-0.5, 1.5}, {-0.2, 0.5});
    bone(5, 400, 470, {-0.5, 1.5}, {-0.2, 0.5});
    bone(3, 390, 460, {-1.6, 0.0}, {-0.1, 0.1});
    bone(6, 390, 460, {-1.6, 0.0}, {-0.1, 0.1});
    // torso and head
    bone(7, 200, 250, {-0.2, 0.6}, {-0.3, 0.3});
    bone(8, 200, 250, {-0.2, 0.3}, {-0.2, 0.2});
    bone(9, 90, 120, {-0.3, 0.4}, {-0.3, 0.3});
    bone(10, 90, 120, {-0.3, 0.3}, {-0.2, 0.2});
    // arms
    bone(11, 130, 170, {-0.1, 0.1}, {-0.2, 0.2});
    bone(14, 130, 170, {-0.1, 0.1}, {-0.2, 0.2});
    bone(12, 250, 300, {-1.0, 2.5}, {-0.2, 1.5});
    bone(15, 250, 300, {-1.0, 2.5}, {-0.2, 1.5});
    bone(13, 220, 270, {0.0, 2.2}, {-0.3, 0.3});
    bone(16, 220, 270, {0.0, 2.2}, {-0.3, 0.3});
    return c;
}

void PoseGenConfig::validate() const {
    for (std::size_t j = 1; j < kJointCount; ++j) {
        const auto& b = bones[j];
        if (!(b.min_length_mm > 0.0) || b.max_length_mm < b.min_length_mm)
            throw UsageError("bone length range for joint " + std::to_string(j) + " must be positive and ordered");
        if (b.flex.hi < b.flex.lo || b.abduction.hi < b.abduction.lo)
            throw UsageError("angle range for joint " + std::to_string(j) + " is inverted");
    }
    if (yaw.hi < yaw.lo || tilt.hi < tilt.lo) throw UsageError("global orientation range is inverted");
}

Pose3D generate_pose(RngStream& stream, const PoseGenConfig& config, const SkeletonGraph& skeleton) {
    if (skeleton.joint_count != kJointCount) throw UsageError("pose generator requires the 17-joint skeleton");
    std::array<Mat3, kJointCount> frame{};
    std::array<std::array<double, 3>, kJointCount> pos{};
    frame[0] = mat3_mul(rot_y(sample(stream, config.yaw)),
                        mat3_mul(rot_x(sample(stream, config.tilt)), rot_z(sample(stream, config.tilt))));
    // parents precede children in the joint order
    for (std::size_t j = 1; j < kJointCount; ++j) {
        const BoneSpec& bone = config.bones[j];
        const double length = stream.uniform(bone.min_length_mm, bone.max_length_mm);
        const double flex = sample(stream, bone.flex);
        const double abd = sample(stream, bone.abduction) * kSide[j];
        const auto p = static_cast<std::size_t>(skeleton.parent[j]);
        frame[j] = mat3_mul(frame[p], mat3_mul(rot_z(abd), rot_x(flex)));
        const auto& d = kRestDirection[j];
        for (int r = 0; r < 3; ++r) {
            const double dir = frame[j][r * 3] * d[0] + frame[j][r * 3 + 1] * d[1] + frame[j][r * 3 + 2] * d[2];
            pos[j][r] = pos[p][r] + length * dir;
        }
    }
    Tensor joints({kJointCount, 3});
    for (std::size_t j = 0; j < kJointCount; ++j)
        for (std::size_t r = 0; r < 3; ++r) joints.at(j, r) = pos[j][r];
    return Pose3D(std::move(joints));
}

Pose2D perturb2d(const Pose2D& pose, double sigma, RngStream& stream) {
    if (!(sigma >= 0.0)) throw UsageError("detector noise sigma must be non-negative");
    if (sigma == 0.0) return pose;
    Tensor noise = gaussian(stream, pose.joints().shape());
    Tensor out = pose.joints();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * noise[i];
    return Pose2D(std::move(out));
}

std::vector<double> bone_lengths(const Pose3D& pose, const SkeletonGraph& skeleton) {
    std::vector<double> out(skeleton.joint_count, 0.0);
    for (std::size_t j = 0; j < skeleton.joint_count; ++j) {
        if (skeleton.parent[j] == kNoParent) continue;
        const auto p = static_cast<std::size_t>(skeleton.parent[j]);
        double s = 0.0;
        for (std::size_t r = 0; r < 3; ++r) s += std::pow(pose(j, r) - pose(p, r), 2);
        out[j] = std::sqrt(s);
    }
    return out;
}

}  // namespace drpose
