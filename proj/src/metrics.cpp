#include "drpose/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "drpose/error.hpp"
#include "drpose/svd3.hpp"

namespace drpose {

std::vector<double> joint_errors(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape() || pred.rank() != 2 || pred.dim(1) != 3)
        throw ShapeError("pose shapes differ: " + shape_string(pred.shape()) + " vs " + shape_string(gt.shape()));
    std::vector<double> out(pred.dim(0));
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double dx = pred.at(j, 0) - gt.at(j, 0);
        const double dy = pred.at(j, 1) - gt.at(j, 1);
        const double dz = pred.at(j, 2) - gt.at(j, 2);
        out[j] = std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

double mpjpe(const Pose3D& pred, const Pose3D& gt) { return mean_of(joint_errors(pred.joints(), gt.joints())); }

Tensor procrustes_align(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape() || pred.rank() != 2 || pred.dim(1) != 3)
        throw ShapeError("procrustes: pose shapes differ");
    const std::size_t n = pred.dim(0);
    std::array<double, 3> mp{}, mg{};
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < 3; ++c) {
            mp[c] += pred.at(j, c) / static_cast<double>(n);
            mg[c] += gt.at(j, c) / static_cast<double>(n);
        }
    double norm_p = 0.0, norm_g = 0.0;
    Mat3 h{};  // sum_j (pred_j - mp) (gt_j - mg)^T
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t r = 0; r < 3; ++r) {
            const double p = pred.at(j, r) - mp[r];
            norm_p += p * p;
            norm_g += std::pow(gt.at(j, r) - mg[r], 2);
            for (std::size_t c = 0; c < 3; ++c) h[r * 3 + c] += p * (gt.at(j, c) - mg[c]);
        }
    }
    if (!(norm_g > 0.0)) throw DataError("procrustes: ground-truth joints are all coincident");

    Tensor out({n, 3});
    if (!(norm_p > 0.0)) {
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < 3; ++c) out.at(j, c) = mg[c];
        return out;
    }
    Svd3Result svd = svd3(h);
    // R = V U^T maps centered pred onto centered gt; flip the weakest axis on reflection
    if (mat3_det(mat3_mul(svd.v, mat3_transpose(svd.u))) < 0.0) {
        for (int r = 0; r < 3; ++r) svd.v[r * 3 + 2] = -svd.v[r * 3 + 2];
        svd.s[2] = -svd.s[2];
    }
    const Mat3 rot = mat3_mul(svd.v, mat3_transpose(svd.u));
    const double scale = (svd.s[0] + svd.s[1] + svd.s[2]) / norm_p;
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t r = 0; r < 3; ++r) {
            double v = 0.0;
            for (std::size_t c = 0; c < 3; ++c) v += rot[r * 3 + c] * (pred.at(j, c) - mp[c]);
            out.at(j, r) = scale * v + mg[r];
        }
    }
    return out;
}

double p_mpjpe(const Pose3D& pred, const Pose3D& gt) {
    return mean_of(joint_errors(procrustes_align(pred.joints(), gt.joints()), gt.joints()));
}

double pck(const Pose3D& pred, const Pose3D& gt, double threshold_mm) {
    if (!(threshold_mm > 0.0)) throw UsageError("PCK threshold must be positive");
    const auto e = joint_errors(pred.joints(), gt.joints());
    std::size_t hit = 0;
    for (double v : e) hit += v < threshold_mm;
    return 100.0 * static_cast<double>(hit) / static_cast<double>(e.size());
}

MetricAccumulator::MetricAccumulator(std::size_t joints) : per_joint_(joints, 0.0) {}

void MetricAccumulator::add(const Pose3D& pred, const Pose3D& gt) {
    const auto e = joint_errors(pred.joints(), gt.joints());
    if (e.size() != per_joint_.size()) throw ShapeError("metric accumulator joint count mismatch");
    ++n_;
    mpjpe_ += mean_of(e);
    p_mpjpe_ += p_mpjpe(pred, gt);
    pck_ += pck(pred, gt);
    for (std::size_t j = 0; j < e.size(); ++j) per_joint_[j] += e[j];
}

MetricReport MetricAccumulator::finish() const {
    MetricReport r;
    r.samples = n_;
    r.per_joint_mpjpe.assign(per_joint_.size(), 0.0);
    if (n_ == 0) return r;
    const double n = static_cast<double>(n_);
    r.mpjpe = mpjpe_ / n;
    r.p_mpjpe = p_mpjpe_ / n;
    r.pck = pck_ / n;
    for (std::size_t j = 0; j < per_joint_.size(); ++j) r.per_joint_mpjpe[j] = per_joint_[j] / n;
    return r;
}

nlohmann::json report_to_json(const MetricReport& r) {
    return {{"samples", r.samples},
            {"mpjpe", r.mpjpe},
            {"p_mpjpe", r.p_mpjpe},
            {"pck", r.pck},
            {"per_joint_mpjpe", r.per_joint_mpjpe}};
}

MetricReport report_from_json(const nlohmann::json& j) {
    try {
        MetricReport r;
        r.samples = j.at("samples").get<std::size_t>();
        r.mpjpe = j.at("mpjpe").get<double>();
        r.p_mpjpe = j.at("p_mpjpe").get<double>();
        r.pck = j.at("pck").get<double>();
        r.per_joint_mpjpe = j.at("per_joint_mpjpe").get<std::vector<double>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed metric report: ") + e.what());
    }
}

std::string report_to_text(const MetricReport& r, const std::vector<std::string>& joint_names) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "samples  %zu\nMPJPE    %.3f mm\nP-MPJPE  %.3f mm\nPCK@150  %.2f %%\n", r.samples,
                  r.mpjpe, r.p_mpjpe, r.pck);
    os << line << "per-joint MPJPE (mm):\n";
    for (std::size_t j = 0; j < r.per_joint_mpjpe.size(); ++j) {
        const std::string name = j < joint_names.size() ? joint_names[j] : "joint" + std::to_string(j);
        std::snprintf(line, sizeof line, "  %-16s %.3f\n", name.c_str(), r.per_joint_mpjpe[j]);
        os << line;
    }
    return os.str();
}

}  // namespace drpose
