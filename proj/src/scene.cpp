#include "gsedit/scene.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/sh.hpp"

#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <string>

namespace gsedit {

Gaussian3D Gaussian3D::from_natural(const Eigen::Vector3f& mean, const Eigen::Vector4f& quat_wxyz,
                                    const Eigen::Vector3f& scale, float opacity, int sh_degree) {
    if (sh_degree < 0 || sh_degree > kMaxShDegree) {
        throw InvalidArgumentError("sh degree must be in [0, 3], got " + std::to_string(sh_degree));
    }
    if (scale.minCoeff() < kMinScale) {
        throw DegenerateCovarianceError("gaussian scale below floor 1e-6");
    }
    if (!(opacity > 0.0f && opacity < 1.0f)) {
        throw InvalidArgumentError("opacity must lie in (0,1)");
    }
    const float qn = quat_wxyz.norm();
    if (!(qn > 0.0f) || !std::isfinite(qn)) {
        throw InvalidArgumentError("rotation quaternion must be nonzero");
    }
    Gaussian3D g;
    g.mean = mean;
    g.rotation = quat_wxyz / qn;
    g.log_scale = scale.array().log().matrix();
    g.opacity_logit = static_cast<float>(logit(opacity));
    g.sh.assign(3 * sh_coeff_count(sh_degree), 0.0f);
    return g;
}

Eigen::Vector3d Gaussian3D::scale() const { return log_scale.cast<double>().array().exp().matrix(); }

double Gaussian3D::opacity() const { return sigmoid(opacity_logit); }

Eigen::Vector4d Gaussian3D::unit_rotation() const {
    const Eigen::Vector4d q = rotation.cast<double>();
    return q / q.norm();
}

int Gaussian3D::sh_degree() const {
    const int n = static_cast<int>(sh.size()) / 3;
    for (int d = 0; d <= kMaxShDegree; ++d) {
        if (sh_coeff_count(d) == n) return d;
    }
    return -1;
}

void Gaussian3D::set_base_color(const Eigen::Vector3f& rgb) {
    for (int c = 0; c < 3; ++c) sh[c] = static_cast<float>((rgb[c] - 0.5) / kShC0);
}

GaussianScene::GaussianScene(int sh_degree) : sh_degree_(sh_degree) {
    if (sh_degree < 0 || sh_degree > kMaxShDegree) {
        throw InvalidArgumentError("sh degree must be in [0, 3], got " + std::to_string(sh_degree));
    }
}

void GaussianScene::add(Gaussian3D g) {
    if (static_cast<int>(g.sh.size()) != 3 * sh_coeff_count(sh_degree_)) {
        throw DimensionError("gaussian SH block does not match scene degree " + std::to_string(sh_degree_));
    }
    gaussians_.push_back(std::move(g));
}

AABB GaussianScene::bbox() const {
    AABB box;
    if (gaussians_.empty()) return box;
    box.lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    box.hi = -box.lo;
    for (const auto& g : gaussians_) {
        box.lo = box.lo.cwiseMin(g.mean.cast<double>());
        box.hi = box.hi.cwiseMax(g.mean.cast<double>());
    }
    return box;
}

std::size_t GaussianScene::editable_count() const {
    std::size_t n = 0;
    for (const auto& g : gaussians_) n += g.editable ? 1 : 0;
    return n;
}

void Camera::validate() const {
    if (width <= 0 || height <= 0) throw InvalidArgumentError("camera size must be positive");
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgumentError("camera focal lengths must be positive");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
        throw InvalidArgumentError("camera principal point outside the image");
    }
    const double err = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(err <= 1e-6)) throw InvalidArgumentError("camera rotation is not orthonormal");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       int width, int height, double focal) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d right = forward.cross(up);
    if (right.norm() < 1e-9) right = forward.cross(Eigen::Vector3d::UnitX());
    right.normalize();
    const Eigen::Vector3d down = forward.cross(right);
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    return cam;
}

Eigen::Matrix3d rotation_from_quaternion(const Eigen::Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Eigen::Matrix3d covariance_of(const Gaussian3D& g) {
    const Eigen::Matrix3d r = rotation_from_quaternion(g.unit_rotation());
    const Eigen::Matrix3d m = r * g.scale().asDiagonal();
    return m * m.transpose();
}

double eval_density(const Gaussian3D& g, const Eigen::Vector3d& x) {
    const Eigen::Vector3d s = g.scale();
    if (s.minCoeff() < kMinScale) {
        throw DegenerateCovarianceError("gaussian scale below floor 1e-6");
    }
    // Sigma^-1 = R diag(1/s^2) R^T; avoids inverting an ill-conditioned product.
    const Eigen::Matrix3d r = rotation_from_quaternion(g.unit_rotation());
    const Eigen::Vector3d local = r.transpose() * (x - g.mean.cast<double>());
    const double mahalanobis = (local.array() / s.array()).square().sum();
    return std::exp(-0.5 * mahalanobis);
}

} // namespace gsedit
