#include "gsedit/synthetic.hpp"

#include "gsedit/errors.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <random>

namespace gsedit {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Eigen::Vector4f quat_wxyz(const Eigen::Quaterniond& q) {
    return Eigen::Vector4f(static_cast<float>(q.w()), static_cast<float>(q.x()), static_cast<float>(q.y()),
                           static_cast<float>(q.z()));
}

} // namespace

Camera orbit_camera(const OrbitSpec& spec, double azimuth_deg) {
    const double az = azimuth_deg * kDeg, el = spec.elevation_deg * kDeg;
    // Orthonormal frame with `up` as the pole.
    const Eigen::Vector3d up = spec.up.normalized();
    Eigen::Vector3d e1 = up.unitOrthogonal();
    const Eigen::Vector3d e2 = up.cross(e1);
    const Eigen::Vector3d dir = std::cos(el) * (std::cos(az) * e1 + std::sin(az) * e2) + std::sin(el) * up;
    return Camera::look_at(spec.center + spec.radius * dir, spec.center, up, spec.width, spec.height, spec.focal);
}

std::vector<Camera> orbit_cameras(const OrbitSpec& spec) {
    if (!(spec.radius > 0.0)) throw InvalidArgumentError("orbit: radius must be positive");
    if (spec.frames < 1) throw InvalidArgumentError("orbit: frame count must be >= 1");
    if (!(std::abs(spec.elevation_deg) < 90.0)) throw InvalidArgumentError("orbit: elevation must be in (-90, 90)");
    if (spec.width < 1 || spec.height < 1 || !(spec.focal > 0.0)) {
        throw InvalidArgumentError("orbit: image size and focal must be positive");
    }
    if (!(spec.up.norm() > 0.0)) throw InvalidArgumentError("orbit: up vector must be non-zero");
    std::vector<Camera> cams;
    cams.reserve(spec.frames);
    for (int i = 0; i < spec.frames; ++i) {
        cams.push_back(orbit_camera(spec, spec.start_azimuth_deg + 360.0 * i / spec.frames));
    }
    return cams;
}

GaussianScene random_scene(const RandomSceneOptions& opts, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    GaussianScene scene(opts.sh_degree);
    const int coeffs = sh_coeff_count(opts.sh_degree);
    for (std::size_t i = 0; i < opts.count; ++i) {
        const Eigen::Vector3d pos = opts.center + opts.extent * Eigen::Vector3d(2 * u(rng) - 1, 2 * u(rng) - 1,
                                                                               2 * u(rng) - 1);
        Eigen::Vector4f q(static_cast<float>(n(rng)), static_cast<float>(n(rng)), static_cast<float>(n(rng)),
                          static_cast<float>(n(rng)));
        if (q.norm() < 1e-3f) q = Eigen::Vector4f(1, 0, 0, 0);
        q.normalize();
        const auto rs = [&] {
            return static_cast<float>(opts.min_scale * std::pow(opts.max_scale / opts.min_scale, u(rng)));
        };
        const Eigen::Vector3f scale(rs(), rs(), rs());
        const auto opacity = static_cast<float>(opts.min_opacity + (opts.max_opacity - opts.min_opacity) * u(rng));
        Gaussian3D g = Gaussian3D::from_natural(pos.cast<float>(), q, scale, opacity, opts.sh_degree);
        g.set_base_color(Eigen::Vector3f(static_cast<float>(u(rng)), static_cast<float>(u(rng)),
                                         static_cast<float>(u(rng))));
        for (int k = 1; k < coeffs; ++k) {
            for (int c = 0; c < 3; ++c) g.sh[k * 3 + c] = static_cast<float>(opts.sh_spread * n(rng));
        }
        scene.add(std::move(g));
    }
    return scene;
}

Camera front_camera(int width, int height, double focal) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    return cam;
}

namespace {

constexpr double kDiskRadius = 0.045;
constexpr double kDiskThickness = 0.012;
constexpr float kSurfaceOpacity = 0.95f;

void add_disk(MannequinScene& out, const Eigen::Vector3d& pos, const Eigen::Vector3d& normal,
              const Eigen::Vector3d& rgb, bool garment) {
    const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), normal.normalized());
    const Eigen::Vector3f scale(static_cast<float>(kDiskRadius), static_cast<float>(kDiskRadius),
                                static_cast<float>(kDiskThickness));
    Gaussian3D g = Gaussian3D::from_natural(pos.cast<float>(), quat_wxyz(q), scale, kSurfaceOpacity, 0);
    g.set_base_color(rgb.cast<float>());
    out.scene.add(std::move(g));
    out.garment.push_back(garment);
}

/// Jittered grid over a vertical cylinder wall.
void add_cylinder(MannequinScene& out, const Eigen::Vector2d& axis_xy, double radius, double z0, double z1,
                  const Eigen::Vector3d& rgb, bool garment, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    const double spacing = 0.05;
    const int around = std::max(8, static_cast<int>(std::ceil(2.0 * std::numbers::pi * radius / spacing)));
    const int rows = std::max(2, static_cast<int>(std::ceil((z1 - z0) / spacing)));
    for (int r = 0; r < rows; ++r) {
        for (int a = 0; a < around; ++a) {
            const double th = 2.0 * std::numbers::pi * (a + 0.5 + jitter(rng)) / around;
            const double z = z0 + (z1 - z0) * (r + 0.5 + jitter(rng)) / rows;
            const Eigen::Vector3d normal(std::cos(th), std::sin(th), 0.0);
            const Eigen::Vector3d pos(axis_xy.x() + radius * normal.x(), axis_xy.y() + radius * normal.y(), z);
            add_disk(out, pos, normal, rgb, garment);
        }
    }
}

void add_sphere(MannequinScene& out, const Eigen::Vector3d& center, double radius, const Eigen::Vector3d& rgb,
                std::size_t count) {
    // Fibonacci lattice.
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < count; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / count;
        const double r = std::sqrt(1.0 - z * z);
        const double th = golden * i;
        const Eigen::Vector3d normal(r * std::cos(th), r * std::sin(th), z);
        add_disk(out, center + radius * normal, normal, rgb, false);
    }
}

} // namespace

MannequinScene make_mannequin_scene(const Eigen::Vector3d& garment_rgb, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    MannequinScene out{GaussianScene(0), {}};
    const Eigen::Vector3d body = Eigen::Vector3d::Constant(0.55);
    add_cylinder(out, {0.0, 0.0}, 0.25, -0.3, 0.5, body, false, rng);           // torso
    add_sphere(out, Eigen::Vector3d(0.0, 0.0, 0.7), 0.15, body, 120);            // head
    add_cylinder(out, {0.1, 0.0}, 0.08, -1.0, -0.3, body, false, rng);          // legs
    add_cylinder(out, {-0.1, 0.0}, 0.08, -1.0, -0.3, body, false, rng);
    add_cylinder(out, {0.0, 0.0}, 0.31, -0.2, 0.42, garment_rgb, true, rng);    // garment shell
    return out;
}

OrbitSpec mannequin_orbit(int frames, int size) {
    OrbitSpec spec;
    spec.center = Eigen::Vector3d(0.0, 0.0, -0.1);
    spec.radius = 3.0;
    spec.elevation_deg = 10.0;
    spec.frames = frames;
    spec.width = spec.height = size;
    spec.focal = 80.0 * size / 64.0;
    return spec;
}

} // namespace gsedit
