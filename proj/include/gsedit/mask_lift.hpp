#pragma once

#include "gsedit/image.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/scene.hpp"

#include <cstddef>
#include <span>

namespace gsedit {

struct ViewMask {
    std::size_t camera_index = 0;
    Image mask;  // H x W x 1, 1 = garment
};

struct LabelingOptions {
    double weight_fraction = 0.6;   // tau
    int min_views = 2;              // k
    double min_contribution = 1e-6; // below this a view says nothing about a gaussian
    RenderOptions render;
};

/// Marks a gaussian editable iff masked_weight / total_weight > tau in at least
/// k views, where the weight is sum over pixels of sigma_i * T_i. Every other
/// gaussian becomes non-editable. Throws InvalidArgumentError for fewer than k
/// masks or a bad camera index, DimensionError for a mask/camera size mismatch.
GaussianScene label_editable(GaussianScene scene, std::span<const Camera> cameras, std::span<const ViewMask> masks,
                             const LabelingOptions& opts = {});

/// Accumulated blend weight of editable gaussians only (H x W x 1, in [0,1]).
Image render_editable_silhouette(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts = {});

} // namespace gsedit
