#include "gsedit/sh.hpp"

#include "gsedit/scene.hpp"

namespace gsedit {

void sh_basis(int degree, const Eigen::Vector3d& dir, std::span<double> out) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[0] = kShC0;
    if (degree < 1) return;
    out[1] = -kShC1 * y;
    out[2] = kShC1 * z;
    out[3] = -kShC1 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kShC2[0] * x * y;
    out[5] = kShC2[1] * y * z;
    out[6] = kShC2[2] * (2.0 * zz - xx - yy);
    out[7] = kShC2[3] * x * z;
    out[8] = kShC2[4] * (xx - yy);
    if (degree < 3) return;
    out[9] = kShC3[0] * y * (3.0 * xx - yy);
    out[10] = kShC3[1] * x * y * z;
    out[11] = kShC3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kShC3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kShC3[5] * z * (xx - yy);
    out[15] = kShC3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_grad(int degree, const Eigen::Vector3d& dir, std::span<Eigen::Vector3d> out) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[0].setZero();
    if (degree < 1) return;
    out[1] = {0.0, -kShC1, 0.0};
    out[2] = {0.0, 0.0, kShC1};
    out[3] = {-kShC1, 0.0, 0.0};
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kShC2[0] * Eigen::Vector3d(y, x, 0.0);
    out[5] = kShC2[1] * Eigen::Vector3d(0.0, z, y);
    out[6] = kShC2[2] * Eigen::Vector3d(-2.0 * x, -2.0 * y, 4.0 * z);
    out[7] = kShC2[3] * Eigen::Vector3d(z, 0.0, x);
    out[8] = kShC2[4] * Eigen::Vector3d(2.0 * x, -2.0 * y, 0.0);
    if (degree < 3) return;
    out[9] = kShC3[0] * Eigen::Vector3d(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
    out[10] = kShC3[1] * Eigen::Vector3d(y * z, x * z, x * y);
    out[11] = kShC3[2] * Eigen::Vector3d(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    out[12] = kShC3[3] * Eigen::Vector3d(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kShC3[4] * Eigen::Vector3d(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    out[14] = kShC3[5] * Eigen::Vector3d(2.0 * x * z, -2.0 * y * z, xx - yy);
    out[15] = kShC3[6] * Eigen::Vector3d(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
}

Eigen::Vector3d sh_color_unclamped(std::span<const float> sh, int degree, const Eigen::Vector3d& dir) {
    std::array<double, 16> basis{};
    sh_basis(degree, dir, basis);
    Eigen::Vector3d rgb = Eigen::Vector3d::Constant(0.5);
    const int n = sh_coeff_count(degree);
    for (int k = 0; k < n; ++k) {
        for (int c = 0; c < 3; ++c) rgb[c] += basis[k] * sh[k * 3 + c];
    }
    return rgb;
}

Eigen::Vector3d sh_to_rgb(std::span<const float> sh, int degree, const Eigen::Vector3d& dir) {
    return sh_color_unclamped(sh, degree, dir).cwiseMax(0.0).cwiseMin(1.0);
}

} // namespace gsedit
