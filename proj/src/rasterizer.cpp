#include "gsedit/rasterizer.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/sh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gsedit {

namespace {

constexpr double kFootprintPower = kFootprintSigma * kFootprintSigma;

/// Projection intermediates shared by the forward projection and its adjoint.
struct ProjectionTerms {
    Eigen::Vector3d cam_point;
    Eigen::Matrix<double, 2, 3> jacobian;
    Eigen::Matrix<double, 2, 3> jw;
    Eigen::Matrix3d rot;      // from the normalized quaternion
    Eigen::Vector3d scale;
    Eigen::Matrix3d cov3d;
    Eigen::Matrix2d cov2d;
};

ProjectionTerms projection_terms(const Gaussian3D& g, const Camera& cam) {
    ProjectionTerms t;
    t.cam_point = cam.to_camera(g.mean.cast<double>());
    const double x = t.cam_point.x(), y = t.cam_point.y(), z = t.cam_point.z();
    t.jacobian << cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z);
    t.jw = t.jacobian * cam.rotation;
    t.rot = rotation_from_quaternion(g.unit_rotation());
    t.scale = g.scale();
    const Eigen::Matrix3d m = t.rot * t.scale.asDiagonal();
    t.cov3d = m * m.transpose();
    t.cov2d = t.jw * t.cov3d * t.jw.transpose();
    t.cov2d(0, 0) += kCovarianceDilation;
    t.cov2d(1, 1) += kCovarianceDilation;
    return t;
}

int clamp_to_int(double v, int lo, int hi) {
    if (!(v > lo)) return lo;
    if (!(v < hi)) return hi;
    return static_cast<int>(v);
}

struct FrameLayout {
    std::vector<Splat2D> splats;
    std::vector<TileKey> keys;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> tile_ranges;
    int tiles_x = 0;
    int tiles_y = 0;
    int tile_size = 16;
};

FrameLayout layout_frame(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts) {
    if (opts.tile_size <= 0) throw InvalidArgumentError("tile size must be positive");
    FrameLayout f;
    f.tile_size = opts.tile_size;
    f.splats = project_scene(scene, cam, opts);
    f.keys = build_tile_keys(f.splats, cam.width, cam.height, opts.tile_size);
    f.tiles_x = (cam.width + opts.tile_size - 1) / opts.tile_size;
    f.tiles_y = (cam.height + opts.tile_size - 1) / opts.tile_size;
    f.tile_ranges.assign(static_cast<std::size_t>(f.tiles_x) * f.tiles_y, {0, 0});
    for (std::size_t i = 0; i < f.keys.size(); ++i) {
        const auto tile = static_cast<std::uint32_t>(f.keys[i].key >> 32);
        if (i == 0 || static_cast<std::uint32_t>(f.keys[i - 1].key >> 32) != tile) f.tile_ranges[tile].first = i;
        f.tile_ranges[tile].second = i + 1;
    }
    return f;
}

/// Walks the sorted splats of one tile for a single pixel, front to back, calling
/// visit(splat, gaussian_weight, sigma, transmittance_before, clamped) for every
/// blended splat. Returns the final transmittance.
template <typename Visit>
double composite_pixel(const FrameLayout& f, std::pair<std::uint32_t, std::uint32_t> range, int px, int py,
                       Visit&& visit) {
    const double cx = px + 0.5, cy = py + 0.5;
    double transmittance = 1.0;
    for (std::uint32_t k = range.first; k < range.second; ++k) {
        const Splat2D& s = f.splats[f.keys[k].splat];
        const double dx = cx - s.mean2d.x(), dy = cy - s.mean2d.y();
        const double power = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        if (power > kFootprintPower) continue;
        const double weight = std::exp(-0.5 * power);
        double sigma = s.alpha * weight;
        const bool clamped = sigma > kMaxBlendWeight;
        if (clamped) sigma = kMaxBlendWeight;
        visit(f.keys[k].splat, weight, sigma, transmittance, clamped);
        transmittance *= 1.0 - sigma;
        if (transmittance < kTransmittanceCutoff) break;
    }
    return transmittance;
}

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

// Per-splat screen-space gradient slots.
enum Grad2D { kU, kV, kConicA, kConicB, kConicC, kR, kG, kB, kAlpha, kGrad2DSize };

} // namespace

std::optional<Splat2D> project_splat(const Gaussian3D& g, const Camera& cam, std::uint32_t source_index,
                                     double near_plane) {
    const Eigen::Vector3d p = cam.to_camera(g.mean.cast<double>());
    if (!(p.z() > near_plane)) return std::nullopt;
    const ProjectionTerms t = projection_terms(g, cam);

    Splat2D s;
    s.depth = p.z();
    s.mean2d = {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
    s.cov2d = t.cov2d;
    const double det = t.cov2d.determinant();
    if (!(det > 0.0)) return std::nullopt;
    s.conic = {t.cov2d(1, 1) / det, -t.cov2d(0, 1) / det, t.cov2d(0, 0) / det};
    s.alpha = g.opacity();
    s.source_index = source_index;

    const double rx = kFootprintSigma * std::sqrt(t.cov2d(0, 0));
    const double ry = kFootprintSigma * std::sqrt(t.cov2d(1, 1));
    // Pixel centers sit at i + 0.5.
    s.x0 = clamp_to_int(std::ceil(s.mean2d.x() - rx - 0.5), 0, cam.width);
    s.x1 = clamp_to_int(std::floor(s.mean2d.x() + rx - 0.5) + 1.0, 0, cam.width);
    s.y0 = clamp_to_int(std::ceil(s.mean2d.y() - ry - 0.5), 0, cam.height);
    s.y1 = clamp_to_int(std::floor(s.mean2d.y() + ry - 0.5) + 1.0, 0, cam.height);
    if (s.x0 >= s.x1 || s.y0 >= s.y1) return std::nullopt;

    const int degree = g.sh_degree();
    const Eigen::Vector3d dir = (g.mean.cast<double>() - cam.center()).normalized();
    const Eigen::Vector3d raw = sh_color_unclamped(g.sh, degree, dir);
    for (int c = 0; c < 3; ++c) {
        s.color_clamped[c] = raw[c] < 0.0 || raw[c] > 1.0;
        s.rgb[c] = std::clamp(raw[c], 0.0, 1.0);
    }
    return s;
}

std::vector<Splat2D> project_scene(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts) {
    if (opts.color_override && opts.color_override->size() != scene.size()) {
        throw DimensionError("color override size does not match scene");
    }
    std::vector<std::optional<Splat2D>> projected(scene.size());
    const auto n = static_cast<std::int64_t>(scene.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        projected[i] = project_splat(scene[i], cam, static_cast<std::uint32_t>(i), opts.near_plane);
    }
    std::vector<Splat2D> splats;
    splats.reserve(scene.size());
    for (auto& p : projected) {
        if (!p) continue;
        if (opts.color_override) {
            p->rgb = (*opts.color_override)[p->source_index];
            p->color_clamped = {};
        }
        splats.push_back(*p);
    }
    return splats;
}

std::uint32_t depth_bits(double depth) {
    // Positive IEEE floats order like their bit patterns.
    return std::bit_cast<std::uint32_t>(static_cast<float>(depth));
}

std::vector<TileKey> build_tile_keys(std::span<const Splat2D> splats, int width, int height, int tile_size) {
    const int tiles_x = (width + tile_size - 1) / tile_size;
    (void)height;
    std::vector<TileKey> keys;
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const Splat2D& s = splats[i];
        const std::uint64_t depth = depth_bits(s.depth);
        for (int ty = s.y0 / tile_size; ty <= (s.y1 - 1) / tile_size; ++ty) {
            for (int tx = s.x0 / tile_size; tx <= (s.x1 - 1) / tile_size; ++tx) {
                const auto tile = static_cast<std::uint64_t>(ty) * tiles_x + tx;
                keys.push_back({(tile << 32) | depth, static_cast<std::uint32_t>(i)});
            }
        }
    }
    std::sort(keys.begin(), keys.end());
    return keys;
}

RenderedImage render_forward(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts) {
    cam.validate();
    const FrameLayout f = layout_frame(scene, cam, opts);
    RenderedImage out;
    out.rgb = Image(cam.width, cam.height, 3);
    out.alpha = Image(cam.width, cam.height, 1);
    out.contributors.assign(out.rgb.pixel_count(), 0);

    std::uint64_t topology = 0;
    const auto tile_count = static_cast<std::int64_t>(f.tile_ranges.size());
#pragma omp parallel for schedule(dynamic) reduction(+ : topology)
    for (std::int64_t tile = 0; tile < tile_count; ++tile) {
        const int tx = static_cast<int>(tile % f.tiles_x), ty = static_cast<int>(tile / f.tiles_x);
        const auto range = f.tile_ranges[tile];
        for (int py = ty * f.tile_size; py < std::min(cam.height, (ty + 1) * f.tile_size); ++py) {
            for (int px = tx * f.tile_size; px < std::min(cam.width, (tx + 1) * f.tile_size); ++px) {
                Eigen::Vector3d color = Eigen::Vector3d::Zero();
                std::uint32_t count = 0;
                std::uint64_t seq = 0xcbf29ce484222325ULL;
                const double t_final = composite_pixel(
                    f, range, px, py, [&](std::uint32_t si, double, double sigma, double t, bool clamped) {
                        color += f.splats[si].rgb * (sigma * t);
                        ++count;
                        if (opts.compute_topology) {
                            seq = mix64(seq ^ (static_cast<std::uint64_t>(f.splats[si].source_index) * 2 + clamped));
                        }
                    });
                color += opts.background * t_final;
                const std::size_t pix = static_cast<std::size_t>(py) * cam.width + px;
                for (int c = 0; c < 3; ++c) out.rgb.data[pix * 3 + c] = color[c];
                out.alpha.data[pix] = 1.0 - t_final;
                out.contributors[pix] = count;
                if (opts.compute_topology) topology += mix64(seq + pix * 0x9e3779b97f4a7c15ULL);
            }
        }
    }
    if (opts.compute_topology) {
        for (const auto& s : f.splats) {
            const std::uint64_t flags = s.color_clamped[0] | (s.color_clamped[1] << 1) | (s.color_clamped[2] << 2);
            topology += mix64((static_cast<std::uint64_t>(s.source_index) << 3 | flags) ^ 0x5bd1e995ULL);
        }
    }
    out.topology = topology;
    return out;
}

SceneGradients::SceneGradients(std::size_t count, int sh_degree)
    : mean(count, Eigen::Vector3d::Zero()),
      rotation(count, Eigen::Vector4d::Zero()),
      log_scale(count, Eigen::Vector3d::Zero()),
      opacity_logit(count, 0.0),
      sh(count * 3 * sh_coeff_count(sh_degree), 0.0),
      mean2d(count, 0.0) {}

namespace {

/// Chains screen-space gradients of one splat back to the stored parameters.
void backprop_splat(const Gaussian3D& g, const Camera& cam, const Splat2D& s, const double* d2,
                    bool color_overridden, SceneGradients& out) {
    const std::size_t gi = s.source_index;
    const ProjectionTerms t = projection_terms(g, cam);
    const double x = t.cam_point.x(), y = t.cam_point.y(), z = t.cam_point.z();
    const double z2 = z * z, z3 = z2 * z;

    // Opacity: sigma = alpha * G, alpha = sigmoid(logit).
    const double alpha = s.alpha;
    out.opacity_logit[gi] = d2[kAlpha] * alpha * (1.0 - alpha);

    // Conic -> 2D covariance: dM = -N dN N with symmetric dN.
    const double det = t.cov2d.determinant();
    Eigen::Matrix2d conic;
    conic << t.cov2d(1, 1) / det, -t.cov2d(0, 1) / det, -t.cov2d(0, 1) / det, t.cov2d(0, 0) / det;
    Eigen::Matrix2d d_conic;
    d_conic << d2[kConicA], 0.5 * d2[kConicB], 0.5 * d2[kConicB], d2[kConicC];
    const Eigen::Matrix2d d_cov2d = -conic * d_conic * conic;

    // cov2d = T Sigma T^T + dilation, T = J W.
    const Eigen::Matrix3d d_cov3d = t.jw.transpose() * d_cov2d * t.jw;
    const Eigen::Matrix<double, 2, 3> d_jw = 2.0 * d_cov2d * t.jw * t.cov3d;
    const Eigen::Matrix<double, 2, 3> d_j = d_jw * cam.rotation.transpose();

    Eigen::Vector3d d_cam = Eigen::Vector3d::Zero();
    d_cam.x() += d_j(0, 2) * (-cam.fx / z2);
    d_cam.y() += d_j(1, 2) * (-cam.fy / z2);
    d_cam.z() += d_j(0, 0) * (-cam.fx / z2) + d_j(0, 2) * (2.0 * cam.fx * x / z3) + d_j(1, 1) * (-cam.fy / z2) +
                 d_j(1, 2) * (2.0 * cam.fy * y / z3);

    // Mean: u = fx x / z + cx, v = fy y / z + cy.
    const double du = d2[kU], dv = d2[kV];
    d_cam.x() += du * cam.fx / z;
    d_cam.y() += dv * cam.fy / z;
    d_cam.z() += -du * cam.fx * x / z2 - dv * cam.fy * y / z2;
    Eigen::Vector3d d_mean = cam.rotation.transpose() * d_cam;
    out.mean2d[gi] = std::hypot(du, dv);

    // SH color and its view-direction dependence.
    const int degree = g.sh_degree();
    const int ncoeff = sh_coeff_count(degree);
    if (!color_overridden) {
        const Eigen::Vector3d view = g.mean.cast<double>() - cam.center();
        const double view_len = view.norm();
        const Eigen::Vector3d dir = view / view_len;
        std::array<double, 16> basis{};
        std::array<Eigen::Vector3d, 16> basis_grad{};
        sh_basis(degree, dir, basis);
        Eigen::Vector3d d_rgb(d2[kR], d2[kG], d2[kB]);
        for (int c = 0; c < 3; ++c) {
            if (s.color_clamped[c]) d_rgb[c] = 0.0;
        }
        double* d_sh = out.sh.data() + gi * 3 * ncoeff;
        for (int k = 0; k < ncoeff; ++k) {
            for (int c = 0; c < 3; ++c) d_sh[k * 3 + c] = d_rgb[c] * basis[k];
        }
        if (degree > 0) {
            sh_basis_grad(degree, dir, basis_grad);
            Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
            for (int k = 1; k < ncoeff; ++k) {
                double w = 0.0;
                for (int c = 0; c < 3; ++c) w += d_rgb[c] * g.sh[k * 3 + c];
                d_dir += w * basis_grad[k];
            }
            d_mean += (d_dir - dir * dir.dot(d_dir)) / view_len;
        }
    }
    out.mean[gi] = d_mean;

    // Sigma = M M^T with M = R S.
    const Eigen::Matrix3d m = t.rot * t.scale.asDiagonal();
    const Eigen::Matrix3d d_m = 2.0 * d_cov3d * m;
    Eigen::Vector3d d_log_scale;
    Eigen::Matrix3d d_rot;
    for (int k = 0; k < 3; ++k) {
        d_log_scale[k] = d_m.col(k).dot(t.rot.col(k)) * t.scale[k];
        d_rot.col(k) = d_m.col(k) * t.scale[k];
    }
    out.log_scale[gi] = d_log_scale;

    const Eigen::Vector4d q = g.unit_rotation();
    const double qw = q[0], qx = q[1], qy = q[2], qz = q[3];
    Eigen::Matrix3d dr_dw, dr_dx, dr_dy, dr_dz;
    dr_dw << 0, -2 * qz, 2 * qy, 2 * qz, 0, -2 * qx, -2 * qy, 2 * qx, 0;
    dr_dx << 0, 2 * qy, 2 * qz, 2 * qy, -4 * qx, -2 * qw, 2 * qz, 2 * qw, -4 * qx;
    dr_dy << -4 * qy, 2 * qx, 2 * qw, 2 * qx, 0, 2 * qz, -2 * qw, 2 * qz, -4 * qy;
    dr_dz << -4 * qz, -2 * qw, 2 * qx, 2 * qw, -4 * qz, 2 * qy, 2 * qx, 2 * qy, 0;
    const Eigen::Vector4d d_unit(d_rot.cwiseProduct(dr_dw).sum(), d_rot.cwiseProduct(dr_dx).sum(),
                                 d_rot.cwiseProduct(dr_dy).sum(), d_rot.cwiseProduct(dr_dz).sum());
    // Through q / |q|.
    const double raw_norm = g.rotation.cast<double>().norm();
    out.rotation[gi] = (d_unit - q * q.dot(d_unit)) / raw_norm;
}

} // namespace

SceneGradients render_backward(const GaussianScene& scene, const Camera& cam, const Image& grad_rgb,
                               const Image* grad_alpha, const RenderOptions& opts) {
    cam.validate();
    if (grad_rgb.width != cam.width || grad_rgb.height != cam.height || grad_rgb.channels != 3) {
        throw DimensionError("render_backward: dL/drgb must be H x W x 3");
    }
    if (grad_alpha && (grad_alpha->width != cam.width || grad_alpha->height != cam.height || grad_alpha->channels != 1)) {
        throw DimensionError("render_backward: dL/dalpha must be H x W x 1");
    }
    const FrameLayout f = layout_frame(scene, cam, opts);
    const std::size_t nsplat = f.splats.size();
    std::vector<double> grad2d(nsplat * kGrad2DSize, 0.0);

    struct Entry {
        std::uint32_t splat;
        double weight, sigma, transmittance;
        bool clamped;
    };

    const auto tile_count = static_cast<std::int64_t>(f.tile_ranges.size());
#pragma omp parallel
    {
        std::vector<double> local(nsplat * kGrad2DSize, 0.0);
        std::vector<Entry> entries;
#pragma omp for schedule(dynamic)
        for (std::int64_t tile = 0; tile < tile_count; ++tile) {
            const int tx = static_cast<int>(tile % f.tiles_x), ty = static_cast<int>(tile / f.tiles_x);
            const auto range = f.tile_ranges[tile];
            if (range.first == range.second) continue;
            for (int py = ty * f.tile_size; py < std::min(cam.height, (ty + 1) * f.tile_size); ++py) {
                for (int px = tx * f.tile_size; px < std::min(cam.width, (tx + 1) * f.tile_size); ++px) {
                    const std::size_t pix = static_cast<std::size_t>(py) * cam.width + px;
                    const Eigen::Vector3d d_color(grad_rgb.data[pix * 3], grad_rgb.data[pix * 3 + 1],
                                                  grad_rgb.data[pix * 3 + 2]);
                    const double d_alpha = grad_alpha ? grad_alpha->data[pix] : 0.0;
                    if (d_color.isZero(0.0) && d_alpha == 0.0) continue;

                    entries.clear();
                    const double t_final = composite_pixel(
                        f, range, px, py, [&](std::uint32_t si, double w, double sigma, double t, bool clamped) {
                            entries.push_back({si, w, sigma, t, clamped});
                        });

                    // Color seen just behind the current splat.
                    Eigen::Vector3d behind = opts.background;
                    const double cx = px + 0.5, cy = py + 0.5;
                    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
                        const Splat2D& s = f.splats[it->splat];
                        double* g = local.data() + it->splat * kGrad2DSize;
                        const double contrib = it->sigma * it->transmittance;
                        g[kR] += d_color[0] * contrib;
                        g[kG] += d_color[1] * contrib;
                        g[kB] += d_color[2] * contrib;
                        const double d_sigma = it->transmittance * d_color.dot(s.rgb - behind) +
                                               d_alpha * t_final / (1.0 - it->sigma);
                        behind = s.rgb * it->sigma + behind * (1.0 - it->sigma);
                        if (it->clamped) continue;
                        g[kAlpha] += d_sigma * it->weight;
                        const double d_power = d_sigma * s.alpha * it->weight * -0.5;
                        const double dx = cx - s.mean2d.x(), dy = cy - s.mean2d.y();
                        g[kU] += d_power * -2.0 * (s.conic[0] * dx + s.conic[1] * dy);
                        g[kV] += d_power * -2.0 * (s.conic[1] * dx + s.conic[2] * dy);
                        g[kConicA] += d_power * dx * dx;
                        g[kConicB] += d_power * 2.0 * dx * dy;
                        g[kConicC] += d_power * dy * dy;
                    }
                }
            }
        }
#pragma omp critical
        for (std::size_t i = 0; i < local.size(); ++i) grad2d[i] += local[i];
    }

    SceneGradients out(scene.size(), scene.sh_degree());
    const bool overridden = opts.color_override != nullptr;
    const auto n = static_cast<std::int64_t>(nsplat);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const Splat2D& s = f.splats[i];
        backprop_splat(scene[s.source_index], cam, s, grad2d.data() + i * kGrad2DSize, overridden, out);
    }
    return out;
}

std::vector<double> accumulate_contributions(const GaussianScene& scene, const Camera& cam, const Image& pixel_weight,
                                             const RenderOptions& opts) {
    cam.validate();
    if (pixel_weight.width != cam.width || pixel_weight.height != cam.height || pixel_weight.channels != 1) {
        throw DimensionError("pixel weight image must be H x W x 1 matching the camera");
    }
    const FrameLayout f = layout_frame(scene, cam, opts);
    std::vector<double> totals(scene.size(), 0.0);
    const auto tile_count = static_cast<std::int64_t>(f.tile_ranges.size());
#pragma omp parallel
    {
        std::vector<double> local(scene.size(), 0.0);
#pragma omp for schedule(dynamic)
        for (std::int64_t tile = 0; tile < tile_count; ++tile) {
            const int tx = static_cast<int>(tile % f.tiles_x), ty = static_cast<int>(tile / f.tiles_x);
            const auto range = f.tile_ranges[tile];
            for (int py = ty * f.tile_size; py < std::min(cam.height, (ty + 1) * f.tile_size); ++py) {
                for (int px = tx * f.tile_size; px < std::min(cam.width, (tx + 1) * f.tile_size); ++px) {
                    const double w = pixel_weight.at(px, py);
                    if (w == 0.0) continue;
                    composite_pixel(f, range, px, py, [&](std::uint32_t si, double, double sigma, double t, bool) {
                        local[f.splats[si].source_index] += w * sigma * t;
                    });
                }
            }
        }
#pragma omp critical
        for (std::size_t i = 0; i < local.size(); ++i) totals[i] += local[i];
    }
    return totals;
}

} // namespace gsedit
