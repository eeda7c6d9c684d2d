#pragma once

#include "gsedit/image.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/scene.hpp"

#include <cstdint>
#include <string>

namespace gsedit {

/// Central finite differences of L = sum(w_rgb * rgb) + sum(w_alpha * alpha)
/// against render_backward, over every stored parameter.
///
/// The rendered image is piecewise smooth: a parameter step can move a pixel
/// across a footprint boundary, swap a depth order, trip the transmittance
/// cutoff or a clamp. Each probe compares the blend topology at theta - h,
/// theta and theta + h; on a mismatch the step is halved, and a parameter
/// still straddling a jump after `max_halvings` is skipped (and counted).
struct GradCheckOptions {
    double step = 1e-4;
    double min_magnitude = 1e-6;  // gradients below this on both sides are not compared
    int max_halvings = 6;
    RenderOptions render;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // parameters sitting on a discontinuity
    std::string worst;        // parameter with the largest error
};

GradCheckReport gradcheck_scene(const GaussianScene& scene, const Camera& cam, const Image& w_rgb,
                                const Image& w_alpha, const GradCheckOptions& opts = {});

struct RandomGradCheckSpec {
    int gaussians = 8;
    int size = 32;
    int sh_degree = 1;
};

/// Random scene in front of a size x size camera with random loss weights.
GradCheckReport gradcheck_random(std::uint64_t seed, const RandomGradCheckSpec& spec = {},
                                 const GradCheckOptions& opts = {});

} // namespace gsedit
