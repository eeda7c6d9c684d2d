#pragma once

#include "gsedit/attention.hpp"
#include "gsedit/denoiser.hpp"
#include "gsedit/errors.hpp"
#include "gsedit/image.hpp"

#include <Eigen/Core>

#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace gsedit {

/// Linear-beta schedule with cumulative products alpha_bar_t = prod_{s<=t} (1 - beta_s).
struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alpha_bars;

    int steps() const { return static_cast<int>(betas.size()); }
    static NoiseSchedule linear(int steps = 100, double beta_start = 1e-4, double beta_end = 2e-2);
};

/// sqrt(alpha_bar) z0 * (1 - m) + sqrt(1 - alpha_bar) eps, elementwise. The mask
/// is H x W x 1 (broadcast over channels) or matches z0 exactly.
Image add_noise_masked(const Image& z0, double alpha_bar, const Image& eps, const Image& mask);
/// Throws InvalidArgumentError when t is outside [0, T).
Image add_noise_masked(const Image& z0, const NoiseSchedule& schedule, int t, const Image& eps, const Image& mask);

Image gaussian_noise(int width, int height, int channels, std::mt19937_64& rng);

double mask_coverage(const Image& mask);

/// K binary masks, each a union of 1-4 axis-aligned rectangles with coverage in [0.10, 0.60].
std::vector<Image> sample_masks(int count, int height, int width, std::uint64_t seed);

struct TrainingExample {
    Image z0;
    Image mask;  // H x W x 1; all zeros for the unmasked objective
    int label = 0;
};

struct AdamMoments {
    Eigen::MatrixXd m, v;
};

/// Adam state for the low-rank factors of every adapted layer.
struct AdapterOptimizer {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int step = 0;
    std::vector<AdamMoments> a, b;
};

void adam_update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, AdamMoments& state, double lr, double beta1,
                 double beta2, double eps, int step);

/// Anything that can predict noise on a tape and backpropagate into DenoiserGrads.
template <typename M>
concept NoisePredictor = requires(M& m, const M& cm, const DenoiserInput& in, DenoiserTape& tape, const Image& d,
                                  DenoiserGrads& g) {
    { cm.forward_train(in, tape) } -> std::same_as<Image>;
    cm.backward(tape, d, g, false);
    { cm.zero_grads(false) } -> std::same_as<DenoiserGrads>;
    { cm.has_trainable_adapters() } -> std::convertible_to<bool>;
    { m.linears() } -> std::same_as<std::vector<AdaptedLinear>&>;
};

double epsilon_mse(const Image& eps, const Image& predicted);

/// One adapter step on the masked objective: per example draws t ~ U[0,T) and
/// eps ~ N(0, I), predicts noise on add_noise_masked(z0, t, eps, mask) and takes
/// an Adam step on the A/B factors of trainable layers only. Returns the batch
/// mean squared error.
template <NoisePredictor M>
double lora_train_step(M& model, std::span<const TrainingExample> batch, const NoiseSchedule& schedule,
                       AdapterOptimizer& opt, std::mt19937_64& rng);

/// Full training of base weights, biases and label embeddings (adapters untouched).
/// Returns the mean loss of the last 10% of iterations.
double train_base(ToyDenoiser& model, std::span<const TrainingExample> data, const NoiseSchedule& schedule,
                  int iters, int batch_size, double lr, std::uint64_t seed);

/// K/V captured at every self-attention site: banks[step][block] holds one entry per view.
struct KVBanks {
    std::vector<std::vector<ReferenceBank>> banks;

    int steps() const { return static_cast<int>(banks.size()); }
    int blocks() const { return banks.empty() ? 0 : static_cast<int>(banks.front().size()); }
};

struct MultiviewEditConfig {
    int start_step = 70;               // editing starts from noise level t = start_step
    std::size_t reference_index = 0;
    bool reference_hooks = true;
    bool shared_noise = true;           // all views draw the same initial noise
    bool previous_step_reference = false; // read the reference K/V of the previous step
    bool record_banks = false;
    std::uint64_t seed = 0;
};

struct MultiviewEditResult {
    std::vector<Image> edited;
    KVBanks banks;
};

/// Denoises n latents in lockstep. With hooks enabled every non-reference view
/// attends over its own K/V concatenated with the reference view's K/V.
/// `masks` (optional, one per view) restricts regeneration to mask = 1 pixels.
MultiviewEditResult multiview_reference_edit(std::span<const Image> images, std::span<const int> labels,
                                             const ToyDenoiser& model, const NoiseSchedule& schedule,
                                             const MultiviewEditConfig& cfg, std::span<const Image> masks = {});

struct PersonaConfig {
    int start_step = 70;
    double lambda = kDefaultPersonaLambda;
    std::uint64_t seed = 0;
};

/// Denoises one latent with persona_blend_attention against banks recorded by a
/// previous multiview edit. Throws InvalidArgumentError for empty banks with
/// lambda < 1 and DimensionError when the bank layout does not match.
Image persona_denoise(const Image& latent, int label, const KVBanks& banks, const ToyDenoiser& model,
                      const NoiseSchedule& schedule, const PersonaConfig& cfg, const Image* mask = nullptr);

/// Same sampler with plain attention.
Image plain_denoise(const Image& latent, int label, const ToyDenoiser& model, const NoiseSchedule& schedule,
                    int start_step, std::uint64_t seed, const Image* mask = nullptr);

// Procedural "mannequin" data: gray body on black with a colored torso garment.

struct MannequinPose {
    double view = 0.0;   // in [-1, 1]; narrows and shifts the figure
    double scale = 1.0;
};

struct MannequinSample {
    Image image;
    Image garment_mask;  // H x W x 1, coverage >= 0.5
    Image body_mask;
    int label = 0;
    int mode = 0;
};

constexpr int kGarmentLabels = 4;
int garment_modes(int label);
Eigen::Vector3d garment_color(int label, int mode);
constexpr double kBodyGray = 0.55;

MannequinSample render_mannequin(int size, const MannequinPose& pose, const Eigen::Vector3d& garment_rgb);

/// Random labels, modes and poses; deterministic per seed.
std::vector<MannequinSample> generate_mannequins(int count, int size, std::uint64_t seed);

/// Mean color over mask = 1 pixels.
Eigen::Vector3d masked_mean_color(const Image& img, const Image& mask);

// ---- template definitions ----

template <NoisePredictor M>
double lora_train_step(M& model, std::span<const TrainingExample> batch, const NoiseSchedule& schedule,
                       AdapterOptimizer& opt, std::mt19937_64& rng) {
    if (!model.has_trainable_adapters()) throw InvalidArgumentError("lora_train_step: no trainable adapters");
    if (batch.empty()) throw InvalidArgumentError("lora_train_step: empty batch");
    auto& layers = model.linears();
    if (opt.a.size() != layers.size()) {
        opt.a.assign(layers.size(), {});
        opt.b.assign(layers.size(), {});
    }
    DenoiserGrads grads = model.zero_grads(false);
    std::uniform_int_distribution<int> pick_t(0, schedule.steps() - 1);
    double loss = 0.0;
    DenoiserTape tape;
    for (const auto& ex : batch) {
        const int t = pick_t(rng);
        const Image eps = gaussian_noise(ex.z0.width, ex.z0.height, ex.z0.channels, rng);
        const Image noisy = add_noise_masked(ex.z0, schedule, t, eps, ex.mask);
        const Image pred = model.forward_train(DenoiserInput{&noisy, ex.label, t}, tape);
        loss += epsilon_mse(eps, pred);
        Image d_pred(pred.width, pred.height, pred.channels);
        const double scale = 2.0 / (static_cast<double>(pred.data.size()) * batch.size());
        for (std::size_t i = 0; i < pred.data.size(); ++i) d_pred.data[i] = scale * (pred.data[i] - eps.data[i]);
        model.backward(tape, d_pred, grads, false);
    }
    ++opt.step;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].trainable) continue;
        auto& delta = layers[i].delta();
        adam_update(delta.a, grads.linear[i].a, opt.a[i], opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step);
        adam_update(delta.b, grads.linear[i].b, opt.b[i], opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step);
    }
    return loss / static_cast<double>(batch.size());
}

} // namespace gsedit
