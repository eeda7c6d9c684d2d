#pragma once

#include <Eigen/Core>

#include <array>
#include <span>

namespace gsedit {

constexpr double kShC0 = 0.28209479177387814;
constexpr double kShC1 = 0.4886025119029199;
constexpr std::array<double, 5> kShC2 = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                         -1.0925484305920792, 0.5462742152960396};
constexpr std::array<double, 7> kShC3 = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                                         0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                         -0.5900435899266435};

/// Real SH basis values Y_k(dir) for k < (degree+1)^2. `dir` must be unit length.
void sh_basis(int degree, const Eigen::Vector3d& dir, std::span<double> out);

/// Partial derivatives dY_k/d(x,y,z), treating the three components of the
/// (already normalized) direction as independent variables.
void sh_basis_grad(int degree, const Eigen::Vector3d& dir, std::span<Eigen::Vector3d> out);

/// Unclamped SH color: sum_k sh[k] Y_k(dir) + 0.5 per channel.
Eigen::Vector3d sh_color_unclamped(std::span<const float> sh, int degree, const Eigen::Vector3d& dir);

/// SH color with the +0.5 offset, clamped to [0,1].
Eigen::Vector3d sh_to_rgb(std::span<const float> sh, int degree, const Eigen::Vector3d& dir);

} // namespace gsedit
