#include "gsedit/gradcheck.hpp"

#include "gsedit/errors.hpp"
#include "gsedit/synthetic.hpp"

#include <cmath>
#include <random>

namespace gsedit {

namespace {

struct Probe {
    double loss;
    std::uint64_t topology;
};

Probe evaluate(const GaussianScene& scene, const Camera& cam, const Image& w_rgb, const Image& w_alpha,
               const RenderOptions& ro) {
    const RenderedImage r = render_forward(scene, cam, ro);
    double l = 0.0;
    for (std::size_t i = 0; i < r.rgb.data.size(); ++i) l += w_rgb.data[i] * r.rgb.data[i];
    for (std::size_t i = 0; i < r.alpha.data.size(); ++i) l += w_alpha.data[i] * r.alpha.data[i];
    return {l, r.topology};
}

} // namespace

GradCheckReport gradcheck_scene(const GaussianScene& scene, const Camera& cam, const Image& w_rgb,
                                const Image& w_alpha, const GradCheckOptions& opts) {
    if (w_rgb.width != cam.width || w_rgb.height != cam.height || w_rgb.channels != 3 ||
        w_alpha.width != cam.width || w_alpha.height != cam.height || w_alpha.channels != 1) {
        throw DimensionError("gradcheck: weight images must match the camera");
    }
    RenderOptions ro = opts.render;
    ro.compute_topology = true;
    const SceneGradients analytic = render_backward(scene, cam, w_rgb, &w_alpha, ro);
    const std::uint64_t base_topology = render_forward(scene, cam, ro).topology;

    GradCheckReport report;
    GaussianScene work = scene;
    const std::size_t sh_n = analytic.sh_stride();
    for (std::size_t i = 0; i < scene.size(); ++i) {
        Gaussian3D& g = work[i];
        // (label, pointer to stored float, analytic value)
        std::vector<std::tuple<std::string, float*, double>> params;
        const std::string gid = "g" + std::to_string(i) + ".";
        for (int c = 0; c < 3; ++c) params.emplace_back(gid + "mean" + std::to_string(c), &g.mean[c], analytic.mean[i][c]);
        for (int c = 0; c < 4; ++c) {
            params.emplace_back(gid + "rotation" + std::to_string(c), &g.rotation[c], analytic.rotation[i][c]);
        }
        for (int c = 0; c < 3; ++c) {
            params.emplace_back(gid + "log_scale" + std::to_string(c), &g.log_scale[c], analytic.log_scale[i][c]);
        }
        params.emplace_back(gid + "opacity_logit", &g.opacity_logit, analytic.opacity_logit[i]);
        for (std::size_t k = 0; k < sh_n; ++k) {
            params.emplace_back(gid + "sh" + std::to_string(k), &g.sh[k], analytic.sh[i * sh_n + k]);
        }

        for (auto& [label, ptr, grad] : params) {
            const float original = *ptr;
            double h = opts.step;
            bool resolved = false;
            double numeric = 0.0;
            for (int attempt = 0; attempt <= opts.max_halvings; ++attempt, h *= 0.5) {
                const float plus = static_cast<float>(original + h);
                const float minus = static_cast<float>(original - h);
                *ptr = plus;
                const Probe fp = evaluate(work, cam, w_rgb, w_alpha, ro);
                *ptr = minus;
                const Probe fm = evaluate(work, cam, w_rgb, w_alpha, ro);
                *ptr = original;
                if (fp.topology != base_topology || fm.topology != base_topology) continue;
                numeric = (fp.loss - fm.loss) / (static_cast<double>(plus) - static_cast<double>(minus));
                resolved = true;
                break;
            }
            if (!resolved) {
                ++report.skipped;
                continue;
            }
            const double mag = std::max(std::abs(numeric), std::abs(grad));
            if (mag <= opts.min_magnitude) continue;
            ++report.checked;
            const double rel = std::abs(numeric - grad) / mag;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = label;
            }
        }
    }
    return report;
}

GradCheckReport gradcheck_random(std::uint64_t seed, const RandomGradCheckSpec& spec, const GradCheckOptions& opts) {
    RandomSceneOptions rs;
    rs.count = static_cast<std::size_t>(spec.gaussians);
    rs.sh_degree = spec.sh_degree;
    rs.center = Eigen::Vector3d(0.0, 0.0, 4.0);
    rs.extent = 1.2;
    rs.min_scale = 0.1;
    rs.max_scale = 0.5;
    rs.min_opacity = 0.2;
    rs.max_opacity = 0.9;
    rs.sh_spread = 0.2;
    const GaussianScene scene = random_scene(rs, seed);
    const Camera cam = front_camera(spec.size, spec.size, spec.size);

    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Image w_rgb(spec.size, spec.size, 3), w_alpha(spec.size, spec.size, 1);
    for (auto& v : w_rgb.data) v = u(rng);
    for (auto& v : w_alpha.data) v = u(rng);
    return gradcheck_scene(scene, cam, w_rgb, w_alpha, opts);
}

} // namespace gsedit
