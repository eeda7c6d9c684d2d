#pragma once

#include "gsedit/denoiser.hpp"
#include "gsedit/diffusion.hpp"
#include "gsedit/image.hpp"
#include "gsedit/losses.hpp"
#include "gsedit/rasterizer.hpp"
#include "gsedit/scene.hpp"

#include <json.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gsedit {

/// Per-group Adam step sizes. Positions decay exponentially from `position`
/// to `position_final` over the run and are multiplied by `position_scale`
/// (typically the scene extent). Higher-order SH use sh / 20.
struct LearningRates {
    double position = 1.6e-4;
    double position_final = 1.6e-6;
    double position_scale = 1.0;
    double sh = 2.5e-3;
    double opacity = 5e-2;
    double scale = 5e-3;
    double rotation = 1e-3;

    double position_at(int iteration, int total_iterations) const;
};

/// Newline-delimited JSON sink; a null stream discards records.
class TrainingLog {
public:
    explicit TrainingLog(std::ostream* out = nullptr) : out_(out) {}
    void record(const nlohmann::json& entry);
    std::size_t records() const { return records_; }

private:
    std::ostream* out_;
    std::size_t records_ = 0;
};

/// Adam over every stored gaussian parameter, one moment pair per scalar.
class SceneAdam {
public:
    explicit SceneAdam(const LearningRates& lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-15);

    /// Steps every gaussian whose flag in `update` is set (all when null).
    /// Rotations are renormalized and log-scales floored at log(kMinScale).
    void step(GaussianScene& scene, const SceneGradients& grads, double position_lr,
              const std::vector<bool>* update = nullptr);

    /// Rebuilds the moment buffers after densification: entry i of `origin`
    /// names the old gaussian whose moments new gaussian i inherits, or -1 for fresh ones.
    void remap(const std::vector<long>& origin);

    int steps() const { return step_; }
    std::size_t stride() const { return stride_; }

private:
    void ensure(const GaussianScene& scene);

    LearningRates lr_;
    double beta1_, beta2_, eps_;
    int step_ = 0;
    std::size_t stride_ = 0;
    std::vector<double> m_, v_;
};

struct FitConfig {
    int iters = 2000;
    LearningRates lr;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    int tile_size = 16;
    std::uint64_t seed = 0;
    int sh_degree = 0;

    std::size_t init_points = 2000;
    /// Depth range (along each view) for initial points; derived from the camera layout when unset.
    std::optional<std::pair<double, double>> init_depth;
    double init_opacity = 0.1;

    double l2_weight = 0.0;  // loss = (1 - w) L1 + w L2

    bool densify = true;
    int densify_interval = 500;
    int densify_until = -1;        // default: 3/4 of iters
    double densify_grad_threshold = 2e-4;  // mean screen-space gradient norm, NDC units
    double percent_dense = 0.01;   // clone below this fraction of the scene extent, split above
    double prune_opacity = 0.005;
    std::size_t max_gaussians = 30000;

    TrainingLog* log = nullptr;
    int log_every = 100;
};

struct FitResult {
    GaussianScene scene;
    std::vector<double> losses;  // per-iteration training loss
};

/// Random points in the union of the camera frusta, colored by the pixel they project to.
GaussianScene initialize_from_frusta(std::span<const Image> images, std::span<const Camera> cameras,
                                     const FitConfig& cfg);

/// Plain photometric fit. Throws InvalidArgumentError for fewer than two views,
/// DimensionError for image/camera mismatches and NumericalError on a non-finite loss.
FitResult fit_scene(std::span<const Image> images, std::span<const Camera> cameras, const FitConfig& cfg);

/// Conditioning handed to an editor.
struct GarmentCondition {
    int label = 0;
    Eigen::Vector3d color = Eigen::Vector3d(0.0, 0.0, 1.0);
};

/// Injected image editor. Implementations must return an image of the input's
/// shape with finite values in [0,1], deterministically for a given seed.
class ImageEditor {
public:
    virtual ~ImageEditor() = default;
    virtual std::string name() const = 0;
    virtual Image edit(const Image& rendered, const GarmentCondition& cond, const Image& mask,
                       std::uint64_t seed) = 0;
    /// Edits every view at once; the default edits each view independently with seed + view.
    virtual std::vector<Image> edit_views(std::span<const Image> rendered, const GarmentCondition& cond,
                                          std::span<const Image> masks, std::uint64_t seed, int reference_views);
};

class IdentityEditor final : public ImageEditor {
public:
    std::string name() const override { return "identity"; }
    Image edit(const Image& rendered, const GarmentCondition& cond, const Image& mask, std::uint64_t seed) override;
};

/// (1 - m) * img + m * target, per pixel.
class OracleRecolorEditor final : public ImageEditor {
public:
    explicit OracleRecolorEditor(const Eigen::Vector3d& target) : target_(target) {}
    std::string name() const override { return "oracle"; }
    Image edit(const Image& rendered, const GarmentCondition& cond, const Image& mask, std::uint64_t seed) override;

private:
    Eigen::Vector3d target_;
};

struct ToyEditorConfig {
    int start_step = 70;
    double lambda = kDefaultPersonaLambda;
};

/// Runs the toy denoiser on downsampled renders: reference-driven lockstep
/// editing on `reference_views` evenly spaced views, then persona-aware
/// denoising of the remaining views against the recorded banks. The change
/// inside the mask is upsampled and added back onto the full-resolution render.
class ToyDiffusionEditor final : public ImageEditor {
public:
    ToyDiffusionEditor(const ToyDenoiser& model, const NoiseSchedule& schedule, const ToyEditorConfig& cfg = {});
    std::string name() const override { return "toy-diffusion"; }
    Image edit(const Image& rendered, const GarmentCondition& cond, const Image& mask, std::uint64_t seed) override;
    std::vector<Image> edit_views(std::span<const Image> rendered, const GarmentCondition& cond,
                                  std::span<const Image> masks, std::uint64_t seed, int reference_views) override;

private:
    Image to_latent(const Image& img) const;
    Image latent_mask(const Image& mask) const;
    Image lift(const Image& rendered, const Image& latent_before, const Image& latent_after, const Image& mask) const;

    const ToyDenoiser& model_;
    NoiseSchedule schedule_;
    ToyEditorConfig cfg_;
    KVBanks banks_;
};

struct EditConfig {
    double lambda = kDefaultPersonaLambda;
    double lambda1 = 10.0;
    double lambda2 = 15.0;
    int views = 4;
    int refresh_interval = 2500;
    int edit_iters = 4000;
    int lora_iters = 1000;
    LearningRates lr;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    int tile_size = 16;
    bool random_view_order = false;
    std::uint64_t seed = 0;
    GarmentCondition garment;
    TrainingLog* log = nullptr;
    int log_every = 100;

    /// Throws InvalidArgumentError unless every count and weight is positive and lambda is in [0,1].
    void validate() const;
};

/// Number of dataset refreshes after the initial targets: floor((iters - 1) / interval).
int refresh_count(int edit_iters, int refresh_interval);
/// Whether the loop refreshes its targets before iteration `iteration` (0-based).
bool is_refresh_iteration(int iteration, int refresh_interval);

struct EditLoss {
    double mae = 0.0;
    double perceptual = 0.0;
    double total = 0.0;
};

/// Combined objective lambda1 * MAE + lambda2 * perceptual and its image gradient.
EditLoss edit_loss(const Image& render, const Image& target, double lambda1, double lambda2,
                   const PerceptualDistance& dist, Image* grad = nullptr);

struct EditResult {
    GaussianScene scene;
    int refresh_events = 0;
    double initial_loss = 0.0;  // summed over views against the initial targets
    double final_loss = 0.0;    // summed over views against the final targets
    std::vector<double> losses;
};

/// Masked edit loop. Only editable gaussians receive updates. `masks` holds one
/// H x W x 1 mask per camera. Throws InvalidArgumentError for an unlabeled scene
/// and EditorError (naming the view) when the editor fails.
EditResult run_edit(const GaussianScene& scene, std::span<const Camera> cameras, std::span<const Image> masks,
                    ImageEditor& editor, const EditConfig& cfg, const PerceptualDistance* dist = nullptr);

} // namespace gsedit
