#pragma once

#include "gsedit/image.hpp"

namespace gsedit {

/// Mean absolute per-channel difference. Throws DimensionError on shape mismatch.
double mae_loss(const Image& a, const Image& b);
/// d mae / d a (sign convention: sign(0) = 0).
Image mae_loss_grad(const Image& a, const Image& b);

/// Injected image distance used as the perceptual term of the edit objective.
class PerceptualDistance {
public:
    virtual ~PerceptualDistance() = default;
    /// Returns the distance; fills d/da into grad_a when non-null.
    virtual double evaluate(const Image& a, const Image& b, Image* grad_a) const = 0;
    double operator()(const Image& a, const Image& b) const { return evaluate(a, b, nullptr); }
};

/// Default distance. For scales s = 0, 1, 2 (each a 2x2 box downsample of the last):
///   stats_s = mean over 8x8 patches (edge patches truncated) and channels of
///             (mean_a - mean_b)^2 + (var_a - var_b)^2   (population variance)
///   grad_s  = mean over all forward differences d in x and y of |d a - d b|
/// distance = (1/3) sum_s (stats_s + grad_s).
class PatchStatsDistance final : public PerceptualDistance {
public:
    static constexpr int kScales = 3;
    static constexpr int kPatch = 8;
    double evaluate(const Image& a, const Image& b, Image* grad_a) const override;
};

double perceptual_distance(const Image& a, const Image& b);

} // namespace gsedit
