#pragma once

#include "gsedit/attention.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gsedit {

/// Rank-r residual scaling * B * A for a d_out x d_in linear map.
struct LowRankDelta {
    Eigen::MatrixXd a;  // r x d_in
    Eigen::MatrixXd b;  // d_out x r
    double scaling = 1.0;

    int rank() const { return static_cast<int>(a.rows()); }
    int d_in() const { return static_cast<int>(a.cols()); }
    int d_out() const { return static_cast<int>(b.rows()); }
};

/// A ~ N(0, 1/r), B = 0, scaling = 1. Throws InvalidArgumentError unless 0 < r <= min(d_in, d_out).
LowRankDelta init_delta(int d_in, int d_out, int rank, std::uint64_t seed);

struct LinearGrads {
    Eigen::MatrixXd a, b;       // delta factors
    Eigen::MatrixXd weight;     // only filled when base gradients are requested
    Eigen::VectorXd bias;

    void zero_like(const class AdaptedLinear& layer, bool with_base);
};

/// Frozen base map W x + bias with a trainable low-rank residual.
class AdaptedLinear {
public:
    AdaptedLinear() = default;
    AdaptedLinear(Eigen::MatrixXd weight, Eigen::VectorXd bias, LowRankDelta delta);

    int d_in() const { return static_cast<int>(weight_.cols()); }
    int d_out() const { return static_cast<int>(weight_.rows()); }

    const Eigen::MatrixXd& weight() const { return weight_; }
    const Eigen::VectorXd& bias() const { return bias_; }
    const LowRankDelta& delta() const { return delta_; }
    LowRankDelta& delta() { return delta_; }

    /// Base parameters may only be changed through this explicit entry point
    /// (used when pretraining a denoiser, never by adapter training).
    void set_base(Eigen::MatrixXd weight, Eigen::VectorXd bias);
    Eigen::MatrixXd& mutable_weight() { return weight_; }
    Eigen::VectorXd& mutable_bias() { return bias_; }

    bool trainable = true;

    /// W x + scaling B (A x) + bias.
    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    /// Row-batched forward: each row of x is one input.
    FeatureMatrix forward(const FeatureMatrix& x) const;

    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    FeatureMatrix backward(const FeatureMatrix& x, const FeatureMatrix& d_y, LinearGrads& grads,
                           bool with_base) const;

private:
    Eigen::MatrixXd weight_;
    Eigen::VectorXd bias_;
    LowRankDelta delta_;
};

/// W + scaling B A.
Eigen::MatrixXd merge_delta(const AdaptedLinear& layer);

struct NamedDelta {
    std::string name;
    LowRankDelta delta;
};

/// Delta checkpoint: "LORA" | u32 version | u32 count | per layer:
/// u32 name_len, name bytes, u32 d_in, u32 d_out, u32 r, f32 scaling,
/// A (r x d_in, row-major f32), B (d_out x r, row-major f32). Little-endian.
void save_deltas(const std::vector<NamedDelta>& deltas, const std::filesystem::path& path);
std::vector<NamedDelta> load_deltas(const std::filesystem::path& path);

} // namespace gsedit
