#pragma once

#include "gsedit/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace gsedit {

/// Evenly spaced cameras on a horizontal circle around `center`, all looking at it.
struct OrbitSpec {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double radius = 3.0;
    double elevation_deg = 10.0;
    double start_azimuth_deg = 0.0;
    int frames = 8;
    int width = 64;
    int height = 64;
    double focal = 80.0;
    Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
};

/// Throws InvalidArgumentError for a non-positive radius, focal or image size,
/// a frame count below 1 or an elevation outside (-90, 90).
std::vector<Camera> orbit_cameras(const OrbitSpec& spec);
Camera orbit_camera(const OrbitSpec& spec, double azimuth_deg);

struct RandomSceneOptions {
    std::size_t count = 50;
    int sh_degree = 0;
    Eigen::Vector3d center = Eigen::Vector3d(0.0, 0.0, 4.0);
    double extent = 1.5;       // half-width of the placement box
    double min_scale = 0.05;
    double max_scale = 0.4;
    double min_opacity = 0.2;
    double max_opacity = 0.95;
    double sh_spread = 0.3;    // stddev of higher-order SH coefficients
};

/// Random anisotropic gaussians with random rotations, colors and opacities.
GaussianScene random_scene(const RandomSceneOptions& opts, std::uint64_t seed);

/// Camera at the origin looking down +z (identity pose).
Camera front_camera(int width, int height, double focal);

/// Gray body (torso, head, legs) wearing a colored shell around the torso.
/// Membership of each gaussian is returned alongside the scene.
struct MannequinScene {
    GaussianScene scene;
    std::vector<bool> garment;
};

MannequinScene make_mannequin_scene(const Eigen::Vector3d& garment_rgb, std::uint64_t seed);

/// Orbit that frames make_mannequin_scene.
OrbitSpec mannequin_orbit(int frames, int size = 64);

} // namespace gsedit
