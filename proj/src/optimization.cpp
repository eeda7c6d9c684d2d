#include "gsedit/optimization.hpp"

#include "gsedit/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

namespace gsedit {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Per-gaussian layout of the flattened parameter vector.
constexpr std::size_t kMeanOff = 0, kRotOff = 3, kScaleOff = 7, kOpacityOff = 10, kShOff = 11;

bool all_finite(const Image& img) {
    return std::all_of(img.data.begin(), img.data.end(), [](double v) { return std::isfinite(v); });
}

} // namespace

double LearningRates::position_at(int iteration, int total_iterations) const {
    if (total_iterations <= 1 || position <= 0.0 || position_final <= 0.0) return position * position_scale;
    const double t = std::clamp(static_cast<double>(iteration) / (total_iterations - 1), 0.0, 1.0);
    return std::exp((1.0 - t) * std::log(position) + t * std::log(position_final)) * position_scale;
}

void TrainingLog::record(const nlohmann::json& entry) {
    ++records_;
    if (out_) *out_ << entry.dump() << '\n';
}

// ---------------------------------------------------------------- Adam

SceneAdam::SceneAdam(const LearningRates& lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void SceneAdam::ensure(const GaussianScene& scene) {
    const std::size_t stride = kShOff + 3 * static_cast<std::size_t>(sh_coeff_count(scene.sh_degree()));
    if (stride_ == 0) stride_ = stride;
    if (stride_ != stride) throw DimensionError("SceneAdam: SH degree changed between steps");
    if (m_.size() != scene.size() * stride_) {
        m_.resize(scene.size() * stride_, 0.0);
        v_.resize(scene.size() * stride_, 0.0);
    }
}

void SceneAdam::step(GaussianScene& scene, const SceneGradients& grads, double position_lr,
                     const std::vector<bool>* update) {
    if (grads.size() != scene.size()) throw DimensionError("SceneAdam: gradient count does not match the scene");
    if (update && update->size() != scene.size()) throw DimensionError("SceneAdam: update mask size mismatch");
    ensure(scene);
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, step_);
    const double bc2 = 1.0 - std::pow(beta2_, step_);
    const std::size_t sh_n = grads.sh_stride();
    const double log_floor = std::log(kMinScale);

    auto& gs = scene.gaussians();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(gs.size()); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        if (update && !(*update)[i]) continue;
        Gaussian3D& g = gs[i];
        double* m = m_.data() + i * stride_;
        double* v = v_.data() + i * stride_;
        auto adam = [&](std::size_t k, double grad, double lr, float& param) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * grad;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * grad * grad;
            const double mhat = m[k] / bc1, vhat = v[k] / bc2;
            const double delta = lr * mhat / (std::sqrt(vhat) + eps_);
            if (delta != 0.0) param = static_cast<float>(param - delta);  // keeps -0.0f intact
        };
        for (int c = 0; c < 3; ++c) adam(kMeanOff + c, grads.mean[i][c], position_lr, g.mean[c]);
        const Eigen::Vector4f rot_before = g.rotation;
        for (int c = 0; c < 4; ++c) adam(kRotOff + c, grads.rotation[i][c], lr_.rotation, g.rotation[c]);
        for (int c = 0; c < 3; ++c) adam(kScaleOff + c, grads.log_scale[i][c], lr_.scale, g.log_scale[c]);
        adam(kOpacityOff, grads.opacity_logit[i], lr_.opacity, g.opacity_logit);
        for (std::size_t k = 0; k < sh_n; ++k) {
            adam(kShOff + k, grads.sh[i * sh_n + k], k < 3 ? lr_.sh : lr_.sh / 20.0, g.sh[k]);
        }
        // Untouched quaternions keep their bits; renormalizing would perturb the render.
        if (g.rotation != rot_before) {
            const float qn = g.rotation.norm();
            if (qn > 0.0f && std::isfinite(qn)) g.rotation /= qn;
            else g.rotation = Eigen::Vector4f(1.0f, 0.0f, 0.0f, 0.0f);
        }
        for (int c = 0; c < 3; ++c) {
            if (g.log_scale[c] < static_cast<float>(log_floor)) g.log_scale[c] = static_cast<float>(log_floor);
        }
    }
}

void SceneAdam::remap(const std::vector<long>& origin) {
    if (stride_ == 0) return;
    std::vector<double> m(origin.size() * stride_, 0.0), v(origin.size() * stride_, 0.0);
    for (std::size_t i = 0; i < origin.size(); ++i) {
        if (origin[i] < 0) continue;
        const auto src = static_cast<std::size_t>(origin[i]);
        std::copy_n(m_.begin() + src * stride_, stride_, m.begin() + i * stride_);
        std::copy_n(v_.begin() + src * stride_, stride_, v.begin() + i * stride_);
    }
    m_ = std::move(m);
    v_ = std::move(v);
}

// ---------------------------------------------------------------- fitting

namespace {

void check_views(std::span<const Image> images, std::span<const Camera> cameras) {
    if (images.size() != cameras.size()) throw DimensionError("fit: one image per camera required");
    if (images.size() < 2) throw InvalidArgumentError("fit: at least two posed views are required");
    for (std::size_t v = 0; v < images.size(); ++v) {
        cameras[v].validate();
        if (images[v].width != cameras[v].width || images[v].height != cameras[v].height ||
            images[v].channels != 3) {
            throw DimensionError("fit: image " + std::to_string(v) + " does not match its camera");
        }
    }
}

double camera_extent(std::span<const Camera> cameras) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& cam : cameras) c += cam.center();
    c /= static_cast<double>(cameras.size());
    double r = 0.0;
    for (const auto& cam : cameras) r = std::max(r, (cam.center() - c).norm());
    return r > 0.0 ? 1.1 * r : 1.0;
}

std::pair<double, double> default_depth_range(std::span<const Camera> cameras) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& cam : cameras) c += cam.center();
    c /= static_cast<double>(cameras.size());
    double d = 0.0;
    for (const auto& cam : cameras) d += (cam.center() - c).norm();
    d /= static_cast<double>(cameras.size());
    if (d < 1e-9) return {1.0, 5.0};
    return {0.5 * d, 1.5 * d};
}

} // namespace

GaussianScene initialize_from_frusta(std::span<const Image> images, std::span<const Camera> cameras,
                                     const FitConfig& cfg) {
    check_views(images, cameras);
    const auto [near, far] = cfg.init_depth.value_or(default_depth_range(cameras));
    if (!(near > 0.0 && far > near)) throw InvalidArgumentError("fit: invalid initial depth range");
    if (!(cfg.init_opacity > 0.0 && cfg.init_opacity < 1.0)) throw InvalidArgumentError("fit: invalid opacity");

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick_view(0, cameras.size() - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    std::vector<Eigen::Vector3d> points(cfg.init_points);
    std::vector<Eigen::Vector3d> colors(cfg.init_points);
    for (std::size_t i = 0; i < cfg.init_points; ++i) {
        const std::size_t v = pick_view(rng);
        const Camera& cam = cameras[v];
        const double px = u(rng) * cam.width, py = u(rng) * cam.height;
        const double depth = near + (far - near) * u(rng);
        const Eigen::Vector3d p_cam((px - cam.cx) / cam.fx * depth, (py - cam.cy) / cam.fy * depth, depth);
        points[i] = cam.rotation.transpose() * (p_cam - cam.translation);
        const int ix = std::min(cam.width - 1, static_cast<int>(px));
        const int iy = std::min(cam.height - 1, static_cast<int>(py));
        for (int c = 0; c < 3; ++c) colors[i][c] = images[v].at(ix, iy, c);
    }

    GaussianScene scene(cfg.sh_degree);
    const std::size_t n = points.size();
    std::vector<double> scales(n, 0.01);
    // Mean distance to the three nearest neighbors.
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        std::array<double, 3> best{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
                                   std::numeric_limits<double>::max()};
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d2 = (points[i] - points[j]).squaredNorm();
            if (d2 < best[2]) {
                best[2] = d2;
                std::sort(best.begin(), best.end());
            }
        }
        double acc = 0.0;
        int cnt = 0;
        for (double b : best) {
            if (b < std::numeric_limits<double>::max()) {
                acc += b;
                ++cnt;
            }
        }
        scales[i] = cnt ? std::sqrt(acc / cnt) : 0.01;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = static_cast<float>(std::max(scales[i], 1e-4));
        Gaussian3D g = Gaussian3D::from_natural(points[i].cast<float>(), Eigen::Vector4f(1, 0, 0, 0),
                                                Eigen::Vector3f::Constant(s), static_cast<float>(cfg.init_opacity),
                                                cfg.sh_degree);
        g.set_base_color(colors[i].cast<float>());
        scene.add(std::move(g));
    }
    return scene;
}

namespace {

/// Clone small high-gradient gaussians, split large ones, then prune transparent ones.
std::vector<long> densify_and_prune(GaussianScene& scene, const std::vector<double>& grad_accum,
                                    const std::vector<int>& grad_count, const FitConfig& cfg, double extent,
                                    std::mt19937_64& rng) {
    const auto& old = scene.gaussians();
    std::vector<Gaussian3D> next;
    std::vector<long> origin;
    next.reserve(old.size() * 2);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::size_t budget = cfg.max_gaussians > old.size() ? cfg.max_gaussians - old.size() : 0;

    for (std::size_t i = 0; i < old.size(); ++i) {
        const Gaussian3D& g = old[i];
        const double avg = grad_count[i] > 0 ? grad_accum[i] / grad_count[i] : 0.0;
        const bool hot = avg >= cfg.densify_grad_threshold && budget > 0;
        if (!hot) {
            next.push_back(g);
            origin.push_back(static_cast<long>(i));
            continue;
        }
        --budget;
        const Eigen::Vector3d s = g.scale();
        if (s.maxCoeff() <= cfg.percent_dense * extent) {
            next.push_back(g);
            origin.push_back(static_cast<long>(i));
            next.push_back(g);
            origin.push_back(-1);
        } else {
            const Eigen::Matrix3d r = rotation_from_quaternion(g.unit_rotation());
            for (int k = 0; k < 2; ++k) {
                Gaussian3D c = g;
                const Eigen::Vector3d offset = r * Eigen::Vector3d(s[0] * n01(rng), s[1] * n01(rng), s[2] * n01(rng));
                c.mean = (g.mean.cast<double>() + offset).cast<float>();
                for (int a = 0; a < 3; ++a) c.log_scale[a] = static_cast<float>(std::log(s[a] / 1.6));
                next.push_back(c);
                origin.push_back(-1);
            }
        }
    }

    std::vector<Gaussian3D> kept;
    std::vector<long> kept_origin;
    for (std::size_t i = 0; i < next.size(); ++i) {
        if (next[i].opacity() < cfg.prune_opacity) continue;
        kept.push_back(std::move(next[i]));
        kept_origin.push_back(origin[i]);
    }
    GaussianScene out(scene.sh_degree());
    for (auto& g : kept) out.add(std::move(g));
    scene = std::move(out);
    return kept_origin;
}

} // namespace

FitResult fit_scene(std::span<const Image> images, std::span<const Camera> cameras, const FitConfig& cfg) {
    check_views(images, cameras);
    if (cfg.iters < 0) throw InvalidArgumentError("fit: iteration count must be non-negative");
    FitResult result{initialize_from_frusta(images, cameras, cfg), {}};
    if (cfg.iters == 0) return result;

    GaussianScene& scene = result.scene;
    const double extent = camera_extent(cameras);
    LearningRates lr = cfg.lr;
    lr.position_scale *= extent;
    SceneAdam adam(lr);

    RenderOptions ro;
    ro.background = cfg.background;
    ro.tile_size = cfg.tile_size;

    std::mt19937_64 rng(mix_seed(cfg.seed, 1));
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    const int densify_until = cfg.densify_until >= 0 ? cfg.densify_until : (3 * cfg.iters) / 4;
    std::vector<double> grad_accum(scene.size(), 0.0);
    std::vector<int> grad_count(scene.size(), 0);
    const auto t0 = std::chrono::steady_clock::now();

    for (int it = 0; it < cfg.iters; ++it) {
        if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const std::size_t v = order[cursor++];
        const Image render = render_forward(scene, cameras[v], ro).rgb;
        const Image& target = images[v];

        const double w2 = cfg.l2_weight;
        const double n = static_cast<double>(render.data.size());
        double l1 = 0.0, l2 = 0.0;
        Image grad(render.width, render.height, 3);
        for (std::size_t k = 0; k < render.data.size(); ++k) {
            const double d = render.data[k] - target.data[k];
            l1 += std::abs(d);
            l2 += d * d;
            grad.data[k] = ((1.0 - w2) * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) + w2 * 2.0 * d) / n;
        }
        const double loss = ((1.0 - w2) * l1 + w2 * l2) / n;
        if (!std::isfinite(loss)) {
            throw NumericalError("fit: non-finite loss at iteration " + std::to_string(it) + " (view " +
                                 std::to_string(v) + ", " + std::to_string(scene.size()) + " gaussians)");
        }
        result.losses.push_back(loss);

        const SceneGradients grads = render_backward(scene, cameras[v], grad, nullptr, ro);
        adam.step(scene, grads, lr.position_at(it, cfg.iters));

        if (cfg.densify) {
            // Threshold is in NDC units: d/d ndc = (size / 2) d/d pixel.
            const double to_ndc = 0.5 * std::max(cameras[v].width, cameras[v].height);
            for (std::size_t i = 0; i < scene.size(); ++i) {
                if (grads.mean2d[i] > 0.0) {
                    grad_accum[i] += grads.mean2d[i] * to_ndc;
                    ++grad_count[i];
                }
            }
            if ((it + 1) % cfg.densify_interval == 0 && it + 1 <= densify_until && it + 1 < cfg.iters) {
                const std::size_t before = scene.size();
                const auto origin = densify_and_prune(scene, grad_accum, grad_count, cfg, extent, rng);
                adam.remap(origin);
                grad_accum.assign(scene.size(), 0.0);
                grad_count.assign(scene.size(), 0);
                if (cfg.log) {
                    cfg.log->record({{"event", "densify"}, {"iteration", it + 1}, {"before", before},
                                     {"after", scene.size()}});
                }
            }
        }
        if (cfg.log && (it % cfg.log_every == 0 || it + 1 == cfg.iters)) {
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            cfg.log->record({{"iteration", it}, {"loss", loss}, {"view", v}, {"gaussians", scene.size()},
                             {"elapsed_ms", ms}});
        }
    }
    return result;
}

// ---------------------------------------------------------------- editors

std::vector<Image> ImageEditor::edit_views(std::span<const Image> rendered, const GarmentCondition& cond,
                                           std::span<const Image> masks, std::uint64_t seed, int /*reference_views*/) {
    if (masks.size() != rendered.size()) throw DimensionError("editor: one mask per view required");
    std::vector<Image> out;
    out.reserve(rendered.size());
    for (std::size_t v = 0; v < rendered.size(); ++v) {
        try {
            out.push_back(edit(rendered[v], cond, masks[v], mix_seed(seed, v)));
        } catch (const std::exception& e) {
            throw EditorError("editor '" + name() + "' failed on view " + std::to_string(v) + ": " + e.what());
        }
    }
    return out;
}

Image IdentityEditor::edit(const Image& rendered, const GarmentCondition&, const Image&, std::uint64_t) {
    return rendered;
}

Image OracleRecolorEditor::edit(const Image& rendered, const GarmentCondition&, const Image& mask, std::uint64_t) {
    if (mask.width != rendered.width || mask.height != rendered.height || mask.channels != 1) {
        throw DimensionError("oracle editor: mask does not match the image");
    }
    Image out = rendered;
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            const double m = mask.at(x, y);
            for (int c = 0; c < out.channels; ++c) {
                out.at(x, y, c) = (1.0 - m) * rendered.at(x, y, c) + m * target_[std::min(c, 2)];
            }
        }
    }
    return out;
}

ToyDiffusionEditor::ToyDiffusionEditor(const ToyDenoiser& model, const NoiseSchedule& schedule,
                                       const ToyEditorConfig& cfg)
    : model_(model), schedule_(schedule), cfg_(cfg) {
    if (model.config().channels != 3) throw InvalidArgumentError("toy editor: denoiser must be RGB");
}

Image ToyDiffusionEditor::to_latent(const Image& img) const {
    if (img.channels != 3) throw DimensionError("toy editor: expected an RGB render");
    const int s = model_.config().image_size;
    return resize(img, s, s);
}

Image ToyDiffusionEditor::latent_mask(const Image& mask) const {
    const int s = model_.config().image_size;
    Image m = resize(mask, s, s);
    for (auto& v : m.data) v = v >= 0.5 ? 1.0 : 0.0;
    return m;
}

Image ToyDiffusionEditor::lift(const Image& rendered, const Image& before, const Image& after,
                               const Image& mask) const {
    const Image up_before = resize(before, rendered.width, rendered.height);
    const Image up_after = resize(after, rendered.width, rendered.height);
    Image out = rendered;
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            const double m = mask.at(x, y);
            for (int c = 0; c < 3; ++c) {
                out.at(x, y, c) =
                    std::clamp(rendered.at(x, y, c) + m * (up_after.at(x, y, c) - up_before.at(x, y, c)), 0.0, 1.0);
            }
        }
    }
    return out;
}

Image ToyDiffusionEditor::edit(const Image& rendered, const GarmentCondition& cond, const Image& mask,
                               std::uint64_t seed) {
    const Image latent = to_latent(rendered);
    const Image lmask = latent_mask(mask);
    Image out;
    if (banks_.steps() == 0) {
        out = plain_denoise(latent, cond.label, model_, schedule_, cfg_.start_step, seed, &lmask);
    } else {
        out = persona_denoise(latent, cond.label, banks_, model_, schedule_,
                              PersonaConfig{cfg_.start_step, cfg_.lambda, seed}, &lmask);
    }
    return lift(rendered, latent, out, mask);
}

std::vector<Image> ToyDiffusionEditor::edit_views(std::span<const Image> rendered, const GarmentCondition& cond,
                                                  std::span<const Image> masks, std::uint64_t seed,
                                                  int reference_views) {
    if (masks.size() != rendered.size()) throw DimensionError("editor: one mask per view required");
    const std::size_t n = rendered.size();
    if (n < 2) return ImageEditor::edit_views(rendered, cond, masks, seed, reference_views);

    std::vector<Image> latents, lmasks;
    for (std::size_t v = 0; v < n; ++v) {
        latents.push_back(to_latent(rendered[v]));
        lmasks.push_back(latent_mask(masks[v]));
    }
    const std::size_t r = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(reference_views, 2)), 2, n);
    std::vector<std::size_t> ref_idx;
    std::vector<bool> is_ref(n, false);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t v = i * n / r;
        ref_idx.push_back(v);
        is_ref[v] = true;
    }
    std::vector<Image> ref_latents, ref_masks;
    for (auto v : ref_idx) {
        ref_latents.push_back(latents[v]);
        ref_masks.push_back(lmasks[v]);
    }
    const std::vector<int> labels(r, cond.label);
    MultiviewEditConfig mv;
    mv.start_step = cfg_.start_step;
    mv.record_banks = true;
    mv.seed = seed;
    const auto mv_out = multiview_reference_edit(ref_latents, labels, model_, schedule_, mv, ref_masks);
    banks_ = mv_out.banks;

    std::vector<Image> out(n);
    for (std::size_t i = 0; i < r; ++i) out[ref_idx[i]] = lift(rendered[ref_idx[i]], latents[ref_idx[i]], mv_out.edited[i], masks[ref_idx[i]]);
    for (std::size_t v = 0; v < n; ++v) {
        if (is_ref[v]) continue;
        try {
            const Image denoised = persona_denoise(latents[v], cond.label, banks_, model_, schedule_,
                                                   PersonaConfig{cfg_.start_step, cfg_.lambda, mix_seed(seed, v)},
                                                   &lmasks[v]);
            out[v] = lift(rendered[v], latents[v], denoised, masks[v]);
        } catch (const std::exception& e) {
            throw EditorError("editor '" + name() + "' failed on view " + std::to_string(v) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------- edit loop

void EditConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgumentError("edit: lambda must lie in [0,1]");
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) throw InvalidArgumentError("edit: loss weights must be positive");
    if (views < 1 || refresh_interval < 1 || edit_iters < 1 || lora_iters < 1 || tile_size < 1) {
        throw InvalidArgumentError("edit: counts must be positive");
    }
    if (log_every < 1) throw InvalidArgumentError("edit: log interval must be positive");
}

int refresh_count(int edit_iters, int refresh_interval) {
    if (edit_iters < 1 || refresh_interval < 1) throw InvalidArgumentError("refresh schedule needs positive counts");
    return (edit_iters - 1) / refresh_interval;
}

bool is_refresh_iteration(int iteration, int refresh_interval) {
    return iteration > 0 && iteration % refresh_interval == 0;
}

EditLoss edit_loss(const Image& render, const Image& target, double lambda1, double lambda2,
                   const PerceptualDistance& dist, Image* grad) {
    EditLoss l;
    l.mae = mae_loss(render, target);
    Image pgrad;
    l.perceptual = dist.evaluate(render, target, grad ? &pgrad : nullptr);
    l.total = lambda1 * l.mae + lambda2 * l.perceptual;
    if (grad) {
        *grad = mae_loss_grad(render, target);
        for (std::size_t i = 0; i < grad->data.size(); ++i) {
            grad->data[i] = lambda1 * grad->data[i] + lambda2 * pgrad.data[i];
        }
    }
    return l;
}

EditResult run_edit(const GaussianScene& scene, std::span<const Camera> cameras, std::span<const Image> masks,
                    ImageEditor& editor, const EditConfig& cfg, const PerceptualDistance* dist) {
    cfg.validate();
    if (cameras.empty()) throw InvalidArgumentError("edit: no cameras");
    if (masks.size() != cameras.size()) throw DimensionError("edit: one mask per camera required");
    for (std::size_t v = 0; v < cameras.size(); ++v) {
        cameras[v].validate();
        if (masks[v].width != cameras[v].width || masks[v].height != cameras[v].height || masks[v].channels != 1) {
            throw DimensionError("edit: mask " + std::to_string(v) + " does not match its camera");
        }
    }
    if (scene.editable_count() == 0) {
        throw InvalidArgumentError("edit: scene has no editable gaussians (run labeling first)");
    }
    const PatchStatsDistance default_dist;
    const PerceptualDistance& d = dist ? *dist : default_dist;

    EditResult result{scene, 0, 0.0, 0.0, {}};
    GaussianScene& s = result.scene;
    std::vector<bool> editable(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) editable[i] = s[i].editable;

    RenderOptions ro;
    ro.background = cfg.background;
    ro.tile_size = cfg.tile_size;
    const std::size_t n = cameras.size();
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };

    auto render_all = [&] {
        std::vector<Image> out;
        out.reserve(n);
        for (const auto& cam : cameras) out.push_back(render_forward(s, cam, ro).rgb);
        return out;
    };
    std::vector<Image> targets;
    auto refresh = [&](int round) {
        const std::vector<Image> renders = render_all();
        std::vector<Image> fresh;
        try {
            fresh = editor.edit_views(renders, cfg.garment, masks, mix_seed(cfg.seed, static_cast<std::uint64_t>(round)),
                                      cfg.views);
        } catch (const EditorError&) {
            throw;
        } catch (const std::exception& e) {
            throw EditorError("editor '" + editor.name() + "' failed: " + e.what());
        }
        if (fresh.size() != n) throw EditorError("editor '" + editor.name() + "' returned the wrong view count");
        for (std::size_t v = 0; v < n; ++v) {
            const Image& t = fresh[v];
            const bool in_range = std::all_of(t.data.begin(), t.data.end(), [](double x) { return x >= 0.0 && x <= 1.0; });
            if (!t.same_shape(renders[v]) || !all_finite(t) || !in_range) {
                throw EditorError("editor '" + editor.name() + "' returned an invalid image for view " +
                                  std::to_string(v));
            }
        }
        targets = std::move(fresh);
        return renders;
    };

    auto total_loss = [&](const std::vector<Image>& renders) {
        double sum = 0.0;
        for (std::size_t v = 0; v < n; ++v) sum += edit_loss(renders[v], targets[v], cfg.lambda1, cfg.lambda2, d).total;
        return sum;
    };

    int round = 0;
    result.initial_loss = total_loss(refresh(round));
    if (cfg.log) cfg.log->record({{"event", "init_targets"}, {"iteration", 0}, {"loss_sum", result.initial_loss}});

    SceneAdam adam(cfg.lr);
    std::mt19937_64 rng(mix_seed(cfg.seed, 0xed17));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    result.losses.reserve(cfg.edit_iters);

    for (int it = 0; it < cfg.edit_iters; ++it) {
        if (is_refresh_iteration(it, cfg.refresh_interval)) {
            refresh(++round);
            ++result.refresh_events;
            if (cfg.log) cfg.log->record({{"event", "refresh"}, {"iteration", it}, {"elapsed_ms", elapsed_ms()}});
        }
        const std::size_t v = cfg.random_view_order ? pick(rng) : static_cast<std::size_t>(it) % n;
        const Image render = render_forward(s, cameras[v], ro).rgb;
        Image grad;
        const EditLoss loss = edit_loss(render, targets[v], cfg.lambda1, cfg.lambda2, d, &grad);
        if (!std::isfinite(loss.total)) {
            throw NumericalError("edit: non-finite loss at iteration " + std::to_string(it) + " (view " +
                                 std::to_string(v) + ")");
        }
        result.losses.push_back(loss.total);
        const SceneGradients grads = render_backward(s, cameras[v], grad, nullptr, ro);
        adam.step(s, grads, cfg.lr.position_at(it, cfg.edit_iters), &editable);

        if (cfg.log && (it % cfg.log_every == 0 || it + 1 == cfg.edit_iters)) {
            cfg.log->record({{"iteration", it}, {"view", v}, {"loss", loss.total}, {"mae", loss.mae},
                             {"perceptual", loss.perceptual}, {"elapsed_ms", elapsed_ms()}});
        }
    }
    result.final_loss = total_loss(render_all());
    if (cfg.log) {
        cfg.log->record({{"event", "done"}, {"iteration", cfg.edit_iters}, {"refresh_events", result.refresh_events},
                         {"loss_sum", result.final_loss}, {"elapsed_ms", elapsed_ms()}});
    }
    return result;
}

} // namespace gsedit
