#include "gsedit/mask_lift.hpp"

#include "gsedit/errors.hpp"

#include <string>
#include <vector>

namespace gsedit {

GaussianScene label_editable(GaussianScene scene, std::span<const Camera> cameras, std::span<const ViewMask> masks,
                             const LabelingOptions& opts) {
    if (opts.min_views < 1) throw InvalidArgumentError("label_editable: min_views must be >= 1");
    if (static_cast<int>(masks.size()) < opts.min_views) {
        throw InvalidArgumentError("label_editable: need at least " + std::to_string(opts.min_views) + " masked views");
    }
    for (const auto& vm : masks) {
        if (vm.camera_index >= cameras.size()) {
            throw InvalidArgumentError("label_editable: camera index " + std::to_string(vm.camera_index) +
                                       " out of range");
        }
        const Camera& cam = cameras[vm.camera_index];
        if (vm.mask.width != cam.width || vm.mask.height != cam.height || vm.mask.channels != 1) {
            throw DimensionError("label_editable: mask for camera " + std::to_string(vm.camera_index) +
                                 " does not match the camera image size");
        }
    }

    const std::size_t n = scene.size();
    std::vector<std::vector<double>> masked(masks.size()), total(masks.size());
    // Per-view accumulation; the rasterizer parallelizes internally.
    for (std::size_t v = 0; v < masks.size(); ++v) {
        const Camera& cam = cameras[masks[v].camera_index];
        const Image ones(cam.width, cam.height, 1, 1.0);
        masked[v] = accumulate_contributions(scene, cam, masks[v].mask, opts.render);
        total[v] = accumulate_contributions(scene, cam, ones, opts.render);
    }

    auto& gs = scene.gaussians();
    for (std::size_t i = 0; i < n; ++i) {
        int votes = 0;
        for (std::size_t v = 0; v < masks.size(); ++v) {
            if (total[v][i] < opts.min_contribution) continue;
            if (masked[v][i] / total[v][i] > opts.weight_fraction) ++votes;
        }
        gs[i].editable = votes >= opts.min_views;
    }
    return scene;
}

Image render_editable_silhouette(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts) {
    GaussianScene editable_only(scene.sh_degree());
    for (const auto& g : scene.gaussians()) {
        if (g.editable) editable_only.add(g);
    }
    RenderOptions o = opts;
    o.color_override = nullptr;
    return render_forward(editable_only, cam, o).alpha;
}

} // namespace gsedit
