#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "drpose/diffusion.hpp"
#include "drpose/graph.hpp"
#include "drpose/skeleton.hpp"

namespace drpose {

struct ModelConfig {
    std::size_t joints = kJointCount;
    std::size_t channels = 64;
    std::size_t blocks = 3;
    std::size_t heads = 4;
    std::size_t time_embed_dim = 64;
    std::size_t mlp_ratio = 2;
    std::size_t initial_layers = 4;
    std::size_t prm_hidden = 64;
    bool learnable_adjacency = true;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Maps pixels and millimeters into network units; stored in checkpoints.
struct Normalization {
    double pose_scale_mm = 1000.0;
    double cx = 500.0;
    double cy = 500.0;
    double half_width = 500.0;

    static Normalization from_camera(const Camera& camera);
    friend bool operator==(const Normalization&, const Normalization&) = default;
};

// All learnable tensors, keyed by dotted name ("init.*", "sgct.*", "prm.*").
class ModelParams {
public:
    std::map<std::string, Tensor>& tensors() noexcept { return tensors_; }
    const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    std::size_t scalar_count() const;
    std::size_t scalar_count(std::string_view prefix) const;
    bool all_finite() const;
    void bind(Bindings& b) const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
    std::map<std::string, Tensor> tensors_;
};

// Expected shape of every parameter for a config.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

// Sinusoidal features: sin over the first half, cos over the second, at
// geometric frequencies 10000^(-k/half).
Tensor timestep_features(std::size_t t, std::size_t dim);

// Nodes of the refinement graph for a batch.
struct RefineNodes {
    Var y_bar;         // (B,N,3) network units
    Var y_t;           // (B,N,3) diffusion units
    Var x;             // (B,N,2) normalized pixels
    Var t_features;    // (B,D)
    Var time_embedding;
    Var intermediate;  // SGCT output, network units
    Var delta;         // PRM gate
    Var refined;       // PRM output, network units
    Var refined_mm;
};

struct InitialNodes {
    Var x;
    Var pose_mm;  // re-rooted
};

class RefineModel : public Denoiser {
public:
    RefineModel(ModelConfig config, SkeletonGraph skeleton, Normalization norm, ModelParams params);

    static RefineModel initialize(const ModelConfig& config, const SkeletonGraph& skeleton, const Normalization& norm,
                                  std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    const SkeletonGraph& skeleton() const noexcept { return skeleton_; }
    const Normalization& normalization() const noexcept { return norm_; }
    const ModelParams& params() const noexcept { return params_; }
    ModelParams& params() noexcept { return params_; }
    const Tensor& adjacency() const noexcept { return adjacency_; }
    void set_adjacency(Tensor normalized);

    // Graph builders; the caller binds inputs and parameters.
    InitialNodes build_initial(Graph& g, std::size_t batch) const;
    RefineNodes build_refine(Graph& g, std::size_t batch) const;

    Tensor normalize_2d(const Pose2D& x) const;
    Tensor to_units(const Pose3D& pose) const;

    std::vector<Pose3D> initial_predict(std::span<const Pose2D> x) const;
    Pose3D initial_predict(const Pose2D& x) const;

    Tensor embed_timestep(std::size_t t) const;

    // SGCT alone: intermediate pose in millimeters.
    std::vector<Tensor> sgct_forward(std::span<const Pose3D> y_bar, std::span<const Tensor> y_t,
                                     std::span<const Pose2D> x, std::size_t t) const;
    // PRM alone on millimeter inputs.
    Tensor prm_forward(const Tensor& intermediate_mm, const Pose3D& y_bar) const;
    Tensor prm_gate(const Tensor& intermediate_mm, const Pose3D& y_bar) const;

    // prm(sgct(...), y_bar) in millimeters, not re-rooted.
    std::vector<Tensor> refine(std::span<const Pose3D> y_bar, std::span<const Tensor> y_t, std::span<const Pose2D> x,
                               std::span<const std::size_t> t) const;
    Tensor refine(const Pose3D& y_bar, const Tensor& y_t, const Pose2D& x, std::size_t t) const;

    std::vector<Tensor> denoise(std::span<const Pose3D> y_bar, std::span<const Tensor> y_t,
                                std::span<const Pose2D> x, std::size_t t) const override;
    double pose_scale_mm() const override { return norm_.pose_scale_mm; }

    // Binds the refinement inputs for a batch into `b`.
    void bind_refine_inputs(Bindings& b, std::span<const Pose3D> y_bar, std::span<const Tensor> y_t,
                            std::span<const Pose2D> x, std::span<const std::size_t> t) const;

private:
    Var prm_subgraph(Graph& g, Var intermediate, Var y_bar, Var* delta_out) const;

    ModelConfig config_;
    SkeletonGraph skeleton_;
    Normalization norm_;
    ModelParams params_;
    Tensor adjacency_;
};

}  // namespace drpose
