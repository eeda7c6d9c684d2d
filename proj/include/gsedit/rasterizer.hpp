#pragma once

#include "gsedit/image.hpp"
#include "gsedit/scene.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace gsedit {

/// Low-pass dilation added to the diagonal of every projected covariance (px^2).
constexpr double kCovarianceDilation = 0.3;
/// Blending for a pixel stops once transmittance falls below this.
constexpr double kTransmittanceCutoff = 1e-4;
/// Per-splat blend weight is clamped to this before compositing.
constexpr double kMaxBlendWeight = 0.99;
/// Footprint radius in standard deviations; pixels outside the ellipse are skipped.
constexpr double kFootprintSigma = 3.0;
constexpr double kDefaultNearPlane = 0.01;

struct RenderOptions {
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    int tile_size = 16;
    double near_plane = kDefaultNearPlane;
    /// Optional per-gaussian colors replacing SH evaluation (size must match the scene).
    const std::vector<Eigen::Vector3d>* color_override = nullptr;
    /// Hash of the per-pixel blend sequence; only needed by gradient checking.
    bool compute_topology = false;
};

struct Splat2D {
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
    Eigen::Vector3d conic = Eigen::Vector3d::Zero(); // inverse cov2d as (xx, xy, yy)
    double depth = 0.0;
    Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
    double alpha = 0.0;
    std::uint32_t source_index = 0;
    /// Pixel footprint [x0, x1) x [y0, y1) of the 3-sigma bounding box.
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    std::array<bool, 3> color_clamped{};
};

/// EWA projection of one Gaussian; nullopt when behind the near plane or when
/// its 3-sigma footprint contains no pixel center.
std::optional<Splat2D> project_splat(const Gaussian3D& g, const Camera& cam, std::uint32_t source_index,
                                     double near_plane = kDefaultNearPlane);

/// Projects every Gaussian, evaluating SH colors (or the override colors).
std::vector<Splat2D> project_scene(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts = {});

struct TileKey {
    std::uint64_t key = 0;    // tile id (high 32 bits) | depth float bits (low 32 bits)
    std::uint32_t splat = 0;  // index into the splat list

    friend bool operator<(const TileKey& a, const TileKey& b) {
        return a.key != b.key ? a.key < b.key : a.splat < b.splat;
    }
};

std::uint32_t depth_bits(double depth);

/// One key per (splat, overlapped tile), sorted ascending. The splat list must be
/// ordered by source index so that equal depths resolve by source index.
std::vector<TileKey> build_tile_keys(std::span<const Splat2D> splats, int width, int height, int tile_size = 16);

struct RenderedImage {
    Image rgb;
    Image alpha;
    std::vector<std::uint32_t> contributors;
    std::uint64_t topology = 0;
};

RenderedImage render_forward(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts = {});

/// Gradients with respect to the stored parameters. Culled Gaussians get zeros.
struct SceneGradients {
    std::vector<Eigen::Vector3d> mean;
    std::vector<Eigen::Vector4d> rotation;
    std::vector<Eigen::Vector3d> log_scale;
    std::vector<double> opacity_logit;
    std::vector<double> sh;        // flat, scene.size() * 3 (L+1)^2
    std::vector<double> mean2d;    // |dL/d mean2d|, used for densification

    explicit SceneGradients(std::size_t count = 0, int sh_degree = 0);
    std::size_t size() const { return mean.size(); }
    std::size_t sh_stride() const { return size() ? sh.size() / size() : 0; }
};

/// Backpropagates dL/d(rgb) (H x W x 3) and optionally dL/d(alpha) (H x W x 1)
/// through compositing, projection, SH evaluation and the storage transforms.
SceneGradients render_backward(const GaussianScene& scene, const Camera& cam, const Image& grad_rgb,
                               const Image* grad_alpha = nullptr, const RenderOptions& opts = {});

/// Per-gaussian sum over pixels of weight(p) * sigma_i * T_i(p); weight is H x W x 1.
std::vector<double> accumulate_contributions(const GaussianScene& scene, const Camera& cam, const Image& pixel_weight,
                                             const RenderOptions& opts = {});

} // namespace gsedit
