#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstddef>
#include <vector>

namespace gsedit {

constexpr int kMaxShDegree = 3;

/// Smallest admissible Gaussian scale in world units.
constexpr double kMinScale = 1e-6;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// One anisotropic 3D Gaussian in its storage parameterization.
///
/// Stored fields are f32 so that scene files round-trip bit-exactly:
///   - rotation:  quaternion (w, x, y, z), kept at unit norm
///   - log_scale: log of the per-axis standard deviation
///   - opacity_logit: logit of the opacity
///   - sh: 3 * (L+1)^2 coefficients, coefficient-major (sh[k * 3 + channel])
struct Gaussian3D {
    Eigen::Vector3f mean = Eigen::Vector3f::Zero();
    Eigen::Vector4f rotation{1.0f, 0.0f, 0.0f, 0.0f};
    Eigen::Vector3f log_scale = Eigen::Vector3f::Zero();
    float opacity_logit = 0.0f;
    std::vector<float> sh = std::vector<float>(3, 0.0f);
    bool editable = false;

    /// Builds a Gaussian from natural parameters. Throws DegenerateCovarianceError
    /// when any scale is below kMinScale and InvalidArgumentError when the opacity
    /// is outside (0,1) or the quaternion is zero.
    static Gaussian3D from_natural(const Eigen::Vector3f& mean, const Eigen::Vector4f& quat_wxyz,
                                   const Eigen::Vector3f& scale, float opacity, int sh_degree);

    Eigen::Vector3d scale() const;
    double opacity() const;
    Eigen::Vector4d unit_rotation() const;
    int sh_degree() const;

    /// Sets the degree-0 coefficients so that the view-independent color equals rgb.
    void set_base_color(const Eigen::Vector3f& rgb);
};

struct AABB {
    Eigen::Vector3d lo = Eigen::Vector3d::Zero();
    Eigen::Vector3d hi = Eigen::Vector3d::Zero();
};

class GaussianScene {
public:
    explicit GaussianScene(int sh_degree = 0);

    int sh_degree() const { return sh_degree_; }
    std::size_t size() const { return gaussians_.size(); }
    bool empty() const { return gaussians_.empty(); }

    /// Throws DimensionError when g carries a different SH block size.
    void add(Gaussian3D g);

    std::vector<Gaussian3D>& gaussians() { return gaussians_; }
    const std::vector<Gaussian3D>& gaussians() const { return gaussians_; }
    Gaussian3D& operator[](std::size_t i) { return gaussians_[i]; }
    const Gaussian3D& operator[](std::size_t i) const { return gaussians_[i]; }

    AABB bbox() const;
    std::size_t editable_count() const;

private:
    int sh_degree_;
    std::vector<Gaussian3D> gaussians_;
};

/// Pinhole camera; world_to_cam maps world points into a frame where +z looks
/// forward, +x right and +y down. Pixel (i, j) has its center at (i + 0.5, j + 0.5).
struct Camera {
    int width = 0;
    int height = 0;
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    /// Throws InvalidArgumentError when the intrinsics or rotation are invalid.
    void validate() const;

    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }

    /// Camera at `eye` looking at `target`, with world `up` mapped to image -y.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, int width, int height, double focal);
};

Eigen::Matrix3d rotation_from_quaternion(const Eigen::Vector4d& unit_wxyz);

/// Sigma = R diag(s)^2 R^T.
Eigen::Matrix3d covariance_of(const Gaussian3D& g);

/// exp(-1/2 d^T Sigma^-1 d) with d = x - mean.
double eval_density(const Gaussian3D& g, const Eigen::Vector3d& x);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

} // namespace gsedit
