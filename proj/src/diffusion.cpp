#include "gsedit/diffusion.hpp"

#include "gsedit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gsedit {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps <= 0) throw InvalidArgumentError("noise schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
        throw InvalidArgumentError("noise schedule betas must satisfy 0 < start <= end < 1");
    }
    NoiseSchedule s;
    s.betas.resize(steps);
    s.alpha_bars.resize(steps);
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        s.betas[t] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (steps - 1);
        prod *= 1.0 - s.betas[t];
        s.alpha_bars[t] = prod;
    }
    return s;
}

Image add_noise_masked(const Image& z0, double alpha_bar, const Image& eps, const Image& mask) {
    if (!z0.same_shape(eps)) throw DimensionError("add_noise_masked: latent and noise shapes differ");
    const bool broadcast = mask.channels == 1 && z0.channels != 1;
    if (mask.width != z0.width || mask.height != z0.height || (!broadcast && mask.channels != z0.channels)) {
        throw DimensionError("add_noise_masked: mask shape does not match the latent");
    }
    const double signal = std::sqrt(alpha_bar), noise = std::sqrt(1.0 - alpha_bar);
    Image out(z0.width, z0.height, z0.channels);
    for (std::size_t p = 0; p < z0.pixel_count(); ++p) {
        for (int c = 0; c < z0.channels; ++c) {
            const std::size_t i = p * z0.channels + c;
            const double m = broadcast ? mask.data[p] : mask.data[i];
            out.data[i] = signal * z0.data[i] * (1.0 - m) + noise * eps.data[i];
        }
    }
    return out;
}

Image add_noise_masked(const Image& z0, const NoiseSchedule& schedule, int t, const Image& eps, const Image& mask) {
    if (t < 0 || t >= schedule.steps()) {
        throw InvalidArgumentError("timestep " + std::to_string(t) + " outside [0, " +
                                   std::to_string(schedule.steps()) + ")");
    }
    return add_noise_masked(z0, schedule.alpha_bars[t], eps, mask);
}

Image gaussian_noise(int width, int height, int channels, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Image img(width, height, channels);
    for (auto& v : img.data) v = normal(rng);
    return img;
}

double mask_coverage(const Image& mask) {
    if (mask.data.empty()) return 0.0;
    double sum = 0.0;
    for (double v : mask.data) sum += v;
    return sum / static_cast<double>(mask.data.size());
}

std::vector<Image> sample_masks(int count, int height, int width, std::uint64_t seed) {
    if (count <= 0) throw InvalidArgumentError("sample_masks: count must be positive");
    if (height < 2 || width < 2) throw InvalidArgumentError("sample_masks: mask must be at least 2x2");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> rect_count(1, 4);
    std::uniform_int_distribution<int> rect_w(std::max(1, width / 5), std::max(1, width / 2));
    std::uniform_int_distribution<int> rect_h(std::max(1, height / 5), std::max(1, height / 2));
    std::vector<Image> masks;
    masks.reserve(count);
    while (static_cast<int>(masks.size()) < count) {
        Image mask(width, height, 1);
        const int n = rect_count(rng);
        for (int r = 0; r < n; ++r) {
            const int w = rect_w(rng), h = rect_h(rng);
            const int x0 = std::uniform_int_distribution<int>(0, width - w)(rng);
            const int y0 = std::uniform_int_distribution<int>(0, height - h)(rng);
            for (int y = y0; y < y0 + h; ++y) {
                for (int x = x0; x < x0 + w; ++x) mask.at(x, y) = 1.0;
            }
        }
        const double cov = mask_coverage(mask);
        if (cov >= 0.10 && cov <= 0.60) masks.push_back(std::move(mask));
    }
    return masks;
}

void adam_update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, AdamMoments& state, double lr, double beta1,
                 double beta2, double eps, int step) {
    if (state.m.rows() != param.rows() || state.m.cols() != param.cols()) {
        state.m = Eigen::MatrixXd::Zero(param.rows(), param.cols());
        state.v = Eigen::MatrixXd::Zero(param.rows(), param.cols());
    }
    state.m = beta1 * state.m + (1.0 - beta1) * grad;
    state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, step), c2 = 1.0 - std::pow(beta2, step);
    param.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

double epsilon_mse(const Image& eps, const Image& predicted) {
    if (!eps.same_shape(predicted)) throw DimensionError("epsilon_mse: shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < eps.data.size(); ++i) {
        const double d = eps.data[i] - predicted.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(eps.data.size());
}

double train_base(ToyDenoiser& model, std::span<const TrainingExample> data, const NoiseSchedule& schedule,
                  int iters, int batch_size, double lr, std::uint64_t seed) {
    if (data.empty()) throw InvalidArgumentError("train_base: empty dataset");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_int_distribution<int> pick_t(0, schedule.steps() - 1);
    auto& layers = model.linears();
    std::vector<AdamMoments> w_state(layers.size()), b_state(layers.size());
    AdamMoments emb_state;
    const int tail_start = iters - std::max(1, iters / 10);
    double tail_loss = 0.0;
    int tail_count = 0;
    DenoiserTape tape;
    for (int it = 0; it < iters; ++it) {
        DenoiserGrads grads = model.zero_grads(true);
        double loss = 0.0;
        for (int bi = 0; bi < batch_size; ++bi) {
            const auto& ex = data[pick(rng)];
            const int t = pick_t(rng);
            const Image eps = gaussian_noise(ex.z0.width, ex.z0.height, ex.z0.channels, rng);
            const Image noisy = add_noise_masked(ex.z0, schedule, t, eps, ex.mask);
            const Image pred = model.forward_train(DenoiserInput{&noisy, ex.label, t}, tape);
            loss += epsilon_mse(eps, pred);
            Image d_pred(pred.width, pred.height, pred.channels);
            const double scale = 2.0 / (static_cast<double>(pred.data.size()) * batch_size);
            for (std::size_t i = 0; i < pred.data.size(); ++i) d_pred.data[i] = scale * (pred.data[i] - eps.data[i]);
            model.backward(tape, d_pred, grads, true);
        }
        const int step = it + 1;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            adam_update(layers[i].mutable_weight(), grads.linear[i].weight, w_state[i], lr, 0.9, 0.999, 1e-8, step);
            Eigen::MatrixXd bias = layers[i].bias();
            adam_update(bias, grads.linear[i].bias, b_state[i], lr, 0.9, 0.999, 1e-8, step);
            layers[i].mutable_bias() = bias;
        }
        adam_update(model.label_embedding(), grads.label_embedding, emb_state, lr, 0.9, 0.999, 1e-8, step);
        if (it >= tail_start) {
            tail_loss += loss / batch_size;
            ++tail_count;
        }
    }
    return tail_count ? tail_loss / tail_count : 0.0;
}

namespace {

/// Shared DDIM (eta = 0) sampler over a lockstep batch.
std::vector<Image> run_sampler(std::span<const Image> sources, std::span<const int> labels, const ToyDenoiser& model,
                               const NoiseSchedule& schedule, int start_step, std::span<const Image> noise,
                               std::span<const Image> masks, AttentionPolicy& policy) {
    if (start_step < 0 || start_step >= schedule.steps()) {
        throw InvalidArgumentError("edit start step outside the schedule");
    }
    const std::size_t n = sources.size();
    std::vector<Image> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Image no_mask(sources[i].width, sources[i].height, 1);
        z[i] = add_noise_masked(sources[i], schedule.alpha_bars[start_step], noise[i], no_mask);
    }
    std::vector<DenoiserInput> batch(n);
    for (int t = start_step, step = 0; t >= 0; --t, ++step) {
        policy.begin_step(step);
        for (std::size_t i = 0; i < n; ++i) batch[i] = DenoiserInput{&z[i], labels[i], t};
        const std::vector<Image> eps = model.predict(batch, policy);
        const double ab = schedule.alpha_bars[t];
        const double ab_prev = t > 0 ? schedule.alpha_bars[t - 1] : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            Image next(z[i].width, z[i].height, z[i].channels);
            for (std::size_t e = 0; e < z[i].data.size(); ++e) {
                double x0 = (z[i].data[e] - std::sqrt(1.0 - ab) * eps[i].data[e]) / std::sqrt(ab);
                x0 = std::clamp(x0, 0.0, 1.0);
                next.data[e] = t > 0 ? std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps[i].data[e] : x0;
            }
            if (!masks.empty()) {
                // Outside the mask, follow the source along the same noise trajectory.
                const Image& m = masks[i];
                const double keep_signal = t > 0 ? std::sqrt(ab_prev) : 1.0;
                const double keep_noise = t > 0 ? std::sqrt(1.0 - ab_prev) : 0.0;
                for (std::size_t p = 0; p < next.pixel_count(); ++p) {
                    const double w = m.data[p];
                    for (int c = 0; c < next.channels; ++c) {
                        const std::size_t e = p * next.channels + c;
                        const double known = keep_signal * sources[i].data[e] + keep_noise * noise[i].data[e];
                        next.data[e] = w * next.data[e] + (1.0 - w) * known;
                    }
                }
            }
            z[i] = std::move(next);
        }
    }
    return z;
}

class ReferencePolicy final : public AttentionPolicy {
public:
    ReferencePolicy(const MultiviewEditConfig& cfg, int blocks, KVBanks* record)
        : cfg_(cfg), record_(record), current_(blocks), previous_(blocks) {}

    void begin_step(int step_index) override {
        step_ = step_index;
        previous_ = current_;
        if (record_) record_->banks.emplace_back(current_.size());
    }

    FeatureMatrix attend(int block, std::size_t view, std::span<const FeatureMatrix> q,
                         std::span<const FeatureMatrix> k, std::span<const FeatureMatrix> v) override {
        const std::size_t ref = cfg_.reference_index;
        if (view == 0) {
            current_[block] = {k[ref], v[ref]};
            if (record_) {
                auto& bank = record_->banks[step_][block];
                for (std::size_t i = 0; i < k.size(); ++i) bank.entries.emplace_back(k[i], v[i]);
            }
        }
        if (!cfg_.reference_hooks || view == ref) return sdp_attention(q[view], k[view], v[view]);
        const auto& source =
            cfg_.previous_step_reference && previous_[block].first.size() > 0 ? previous_[block] : current_[block];
        return reference_concat_attention(q[view], k[view], v[view], source.first, source.second);
    }

private:
    MultiviewEditConfig cfg_;
    KVBanks* record_;
    int step_ = 0;
    std::vector<std::pair<FeatureMatrix, FeatureMatrix>> current_, previous_;
};

class PersonaPolicy final : public AttentionPolicy {
public:
    PersonaPolicy(const KVBanks& banks, double lambda) : banks_(banks), lambda_(lambda) {}

    void begin_step(int step_index) override { step_ = step_index; }

    FeatureMatrix attend(int block, std::size_t view, std::span<const FeatureMatrix> q,
                         std::span<const FeatureMatrix> k, std::span<const FeatureMatrix> v) override {
        if (lambda_ == 1.0) return sdp_attention(q[view], k[view], v[view]);
        return persona_blend_attention(q[view], k[view], v[view], banks_.banks[step_][block], lambda_);
    }

private:
    const KVBanks& banks_;
    double lambda_;
    int step_ = 0;
};

void check_mask(const Image& mask, const Image& latent) {
    if (mask.width != latent.width || mask.height != latent.height || mask.channels != 1) {
        throw DimensionError("edit mask must be H x W x 1 matching the latent");
    }
}

} // namespace

MultiviewEditResult multiview_reference_edit(std::span<const Image> images, std::span<const int> labels,
                                             const ToyDenoiser& model, const NoiseSchedule& schedule,
                                             const MultiviewEditConfig& cfg, std::span<const Image> masks) {
    if (images.size() < 2) throw InvalidArgumentError("multiview edit needs at least two views");
    if (labels.size() != images.size()) throw DimensionError("one garment label per view required");
    if (cfg.reference_index >= images.size()) throw InvalidArgumentError("reference index out of range");
    if (!masks.empty() && masks.size() != images.size()) throw DimensionError("one mask per view required");
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i].same_shape(images[0])) throw DimensionError("multiview edit: view shapes differ");
        if (!masks.empty()) check_mask(masks[i], images[i]);
    }
    std::vector<Image> noise;
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::mt19937_64 rng(cfg.shared_noise ? cfg.seed : cfg.seed + 0x9e3779b97f4a7c15ULL * (i + 1));
        noise.push_back(gaussian_noise(images[i].width, images[i].height, images[i].channels, rng));
    }
    MultiviewEditResult result;
    ReferencePolicy policy(cfg, model.attention_sites(), cfg.record_banks ? &result.banks : nullptr);
    result.edited = run_sampler(images, labels, model, schedule, cfg.start_step, noise, masks, policy);
    return result;
}

Image persona_denoise(const Image& latent, int label, const KVBanks& banks, const ToyDenoiser& model,
                      const NoiseSchedule& schedule, const PersonaConfig& cfg, const Image* mask) {
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw InvalidArgumentError("persona lambda must lie in [0,1]");
    if (cfg.lambda < 1.0) {
        if (banks.steps() == 0) throw InvalidArgumentError("persona denoise: empty reference bank");
        if (banks.steps() != cfg.start_step + 1) {
            throw DimensionError("persona denoise: bank holds " + std::to_string(banks.steps()) +
                                 " steps, sampler runs " + std::to_string(cfg.start_step + 1));
        }
        for (const auto& per_step : banks.banks) {
            if (static_cast<int>(per_step.size()) != model.attention_sites()) {
                throw DimensionError("persona denoise: bank layer count does not match the denoiser");
            }
            for (const auto& bank : per_step) {
                if (bank.empty()) throw InvalidArgumentError("persona denoise: empty reference bank");
            }
        }
    }
    if (mask) check_mask(*mask, latent);
    std::mt19937_64 rng(cfg.seed);
    const Image noise = gaussian_noise(latent.width, latent.height, latent.channels, rng);
    PersonaPolicy policy(banks, cfg.lambda);
    const int labels[1] = {label};
    std::span<const Image> masks = mask ? std::span<const Image>(mask, 1) : std::span<const Image>();
    return run_sampler(std::span<const Image>(&latent, 1), labels, model, schedule, cfg.start_step,
                       std::span<const Image>(&noise, 1), masks, policy)
        .front();
}

Image plain_denoise(const Image& latent, int label, const ToyDenoiser& model, const NoiseSchedule& schedule,
                    int start_step, std::uint64_t seed, const Image* mask) {
    if (mask) check_mask(*mask, latent);
    std::mt19937_64 rng(seed);
    const Image noise = gaussian_noise(latent.width, latent.height, latent.channels, rng);
    PlainAttention policy;
    const int labels[1] = {label};
    std::span<const Image> masks = mask ? std::span<const Image>(mask, 1) : std::span<const Image>();
    return run_sampler(std::span<const Image>(&latent, 1), labels, model, schedule, start_step,
                       std::span<const Image>(&noise, 1), masks, policy)
        .front();
}

// ---- procedural mannequins ----

int garment_modes(int label) {
    if (label < 0 || label >= kGarmentLabels) throw InvalidArgumentError("garment label out of range");
    return label < 2 ? 1 : 2;
}

Eigen::Vector3d garment_color(int label, int mode) {
    if (mode < 0 || mode >= garment_modes(label)) throw InvalidArgumentError("garment mode out of range");
    switch (label * 2 + mode) {
    case 0: return {0.9, 0.15, 0.15};
    case 2: return {0.15, 0.25, 0.9};
    case 4: return {0.15, 0.8, 0.2};
    case 5: return {0.85, 0.2, 0.8};
    case 6: return {0.9, 0.85, 0.15};
    default: return {0.15, 0.8, 0.85};
    }
}

MannequinSample render_mannequin(int size, const MannequinPose& pose, const Eigen::Vector3d& garment_rgb) {
    if (size < 4) throw InvalidArgumentError("mannequin size must be at least 4");
    MannequinSample s;
    s.image = Image(size, size, 3);
    s.garment_mask = Image(size, size, 1);
    s.body_mask = Image(size, size, 1);
    const double w = pose.scale * (1.0 - 0.3 * std::abs(pose.view));
    const double cx = 0.5 + 0.1 * pose.view;
    // 0 = background, 1 = body, 2 = garment
    auto region = [&](double u, double v) {
        const double dx = u - cx;
        const double torso_half = 0.2 * w;
        if (v >= 0.28 && v <= 0.62 && std::abs(dx) <= torso_half) return 2;
        const double hx = dx / (0.1 * w), hy = (v - 0.16) / 0.1;
        if (hx * hx + hy * hy <= 1.0) return 1;
        if (v >= 0.3 && v <= 0.56 && std::abs(dx) > torso_half && std::abs(dx) <= torso_half + 0.08 * w) return 1;
        if (v > 0.62 && v <= 0.94 && std::abs(dx) >= 0.02 * w && std::abs(dx) <= 0.16 * w) return 1;
        return 0;
    };
    constexpr int kSuper = 4;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            Eigen::Vector3d color = Eigen::Vector3d::Zero();
            double garment = 0.0, body = 0.0;
            for (int sy = 0; sy < kSuper; ++sy) {
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double u = (x + (sx + 0.5) / kSuper) / size, v = (y + (sy + 0.5) / kSuper) / size;
                    const int r = region(u, v);
                    if (r == 2) {
                        color += garment_rgb;
                        garment += 1.0;
                    } else if (r == 1) {
                        color += Eigen::Vector3d::Constant(kBodyGray);
                        body += 1.0;
                    }
                }
            }
            constexpr double n = kSuper * kSuper;
            for (int c = 0; c < 3; ++c) s.image.at(x, y, c) = color[c] / n;
            s.garment_mask.at(x, y) = garment / n >= 0.5 ? 1.0 : 0.0;
            s.body_mask.at(x, y) = (garment + body) / n >= 0.5 ? 1.0 : 0.0;
        }
    }
    return s;
}

std::vector<MannequinSample> generate_mannequins(int count, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick_label(0, kGarmentLabels - 1);
    std::uniform_real_distribution<double> pick_view(-1.0, 1.0), pick_scale(0.85, 1.1);
    std::vector<MannequinSample> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const int label = pick_label(rng);
        const int mode = std::uniform_int_distribution<int>(0, garment_modes(label) - 1)(rng);
        MannequinPose pose{pick_view(rng), pick_scale(rng)};
        MannequinSample s = render_mannequin(size, pose, garment_color(label, mode));
        s.label = label;
        s.mode = mode;
        out.push_back(std::move(s));
    }
    return out;
}

Eigen::Vector3d masked_mean_color(const Image& img, const Image& mask) {
    if (mask.width != img.width || mask.height != img.height || mask.channels != 1) {
        throw DimensionError("masked_mean_color: mask shape mismatch");
    }
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    double weight = 0.0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double m = mask.at(x, y);
            if (m == 0.0) continue;
            for (int c = 0; c < 3; ++c) sum[c] += m * img.at(x, y, c);
            weight += m;
        }
    }
    return weight > 0.0 ? Eigen::Vector3d(sum / weight) : Eigen::Vector3d::Zero();
}

} // namespace gsedit
