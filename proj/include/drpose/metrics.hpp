#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "drpose/skeleton.hpp"

namespace drpose {

inline constexpr double kPckThresholdMm = 150.0;

// Euclidean distance per joint.
std::vector<double> joint_errors(const Tensor& pred, const Tensor& gt);

double mpjpe(const Pose3D& pred, const Pose3D& gt);

// Similarity transform (rotation, uniform scale, translation) of `pred` that best
// fits `gt` in the least-squares sense. Throws DataError if gt is degenerate.
Tensor procrustes_align(const Tensor& pred, const Tensor& gt);
double p_mpjpe(const Pose3D& pred, const Pose3D& gt);

// Percentage of joints with error strictly below the threshold.
double pck(const Pose3D& pred, const Pose3D& gt, double threshold_mm = kPckThresholdMm);

struct MetricReport {
    std::size_t samples = 0;
    double mpjpe = 0.0;
    double p_mpjpe = 0.0;
    double pck = 0.0;
    std::vector<double> per_joint_mpjpe;
};

// Running means over samples; finish() returns the report.
class MetricAccumulator {
public:
    explicit MetricAccumulator(std::size_t joints = kJointCount);
    void add(const Pose3D& pred, const Pose3D& gt);
    MetricReport finish() const;

private:
    std::size_t n_ = 0;
    double mpjpe_ = 0.0, p_mpjpe_ = 0.0, pck_ = 0.0;
    std::vector<double> per_joint_;
};

nlohmann::json report_to_json(const MetricReport& r);
MetricReport report_from_json(const nlohmann::json& j);
std::string report_to_text(const MetricReport& r, const std::vector<std::string>& joint_names);

}  // namespace drpose
