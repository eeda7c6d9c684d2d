#include "gsedit/diffusion.hpp"
#include "gsedit/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace gsedit;

namespace {

Image random_image(int w, int h, int c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

DenoiserConfig tiny_config() {
    DenoiserConfig c;
    c.image_size = 8;
    c.patch = 2;
    c.model_dim = 16;
    c.ff_dim = 24;
    c.blocks = 1;
    c.lora_rank = 4;
    return c;
}

/// Predicts the exact noise by inverting the forward process it was built from.
struct OraclePredictor {
    const NoiseSchedule* schedule;
    const Image* z0;
    const Image* mask;
    std::vector<AdaptedLinear> layers{AdaptedLinear(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1),
                                                    init_delta(1, 1, 1, 0))};

    Image forward_train(const DenoiserInput& in, DenoiserTape&) const {
        const double ab = schedule->alpha_bars[in.t];
        Image eps(in.latent->width, in.latent->height, in.latent->channels);
        for (std::size_t p = 0; p < eps.pixel_count(); ++p) {
            for (int c = 0; c < eps.channels; ++c) {
                const std::size_t i = p * eps.channels + c;
                eps.data[i] = (in.latent->data[i] - std::sqrt(ab) * z0->data[i] * (1.0 - mask->data[p])) /
                              std::sqrt(1.0 - ab);
            }
        }
        return eps;
    }
    void backward(const DenoiserTape&, const Image&, DenoiserGrads& g, bool) const { (void)g; }
    DenoiserGrads zero_grads(bool) const {
        DenoiserGrads g;
        g.linear.resize(1);
        g.linear[0].zero_like(layers[0], false);
        return g;
    }
    bool has_trainable_adapters() const { return true; }
    std::vector<AdaptedLinear>& linears() { return layers; }
};

std::vector<TrainingExample> two_color_set(int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<TrainingExample> out;
    const auto masks = sample_masks(count, 8, 8, seed + 1);
    for (int i = 0; i < count; ++i) {
        const int label = i % 2;
        Image img(8, 8, 3);
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                const bool left = x < 4;
                img.at(x, y, 0) = left == (label == 0) ? 0.9 : 0.1;
                img.at(x, y, 2) = left == (label == 0) ? 0.1 : 0.9;
                img.at(x, y, 1) = 0.3;
            }
        }
        out.push_back({img, masks[i], label});
    }
    return out;
}

} // namespace

TEST(Schedule, LinearBetas) {
    const NoiseSchedule s = NoiseSchedule::linear();
    ASSERT_EQ(s.steps(), 100);
    EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
    EXPECT_DOUBLE_EQ(s.betas.back(), 2e-2);
    EXPECT_NEAR(s.alpha_bars[0], 1.0 - 1e-4, 1e-15);
    for (int t = 1; t < s.steps(); ++t) {
        EXPECT_LT(s.alpha_bars[t], s.alpha_bars[t - 1]);
        EXPECT_GT(s.betas[t], 0.0);
        EXPECT_LT(s.betas[t], 1.0);
    }
}

TEST(AddNoise, Endpoints) {
    std::mt19937_64 rng(1);
    const Image z0 = random_image(6, 5, 3, rng), eps = gaussian_noise(6, 5, 3, rng);
    EXPECT_EQ(add_noise_masked(z0, 1.0, eps, Image(6, 5, 1)).data, z0.data);
    const double ab = 0.37;
    const Image all = add_noise_masked(z0, ab, eps, Image(6, 5, 1, 1.0));
    for (std::size_t i = 0; i < eps.data.size(); ++i) EXPECT_EQ(all.data[i], std::sqrt(1.0 - ab) * eps.data[i]);
}

TEST(AddNoise, ElementwiseOracleAndLinearity) {
    std::mt19937_64 rng(2);
    const NoiseSchedule s = NoiseSchedule::linear();
    const Image z0 = random_image(8, 8, 3, rng), eps = gaussian_noise(8, 8, 3, rng);
    const Image mask = sample_masks(1, 8, 8, 3).front();
    const int t = 42;
    const Image out = add_noise_masked(z0, s, t, eps, mask);
    const double ab = s.alpha_bars[t];
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double e = std::sqrt(ab) * z0.at(x, y, c) * (1 - mask.at(x, y)) + std::sqrt(1 - ab) * eps.at(x, y, c);
                EXPECT_NEAR(out.at(x, y, c), e, 1e-6);
            }
        }
    }
    Image z2 = z0, e2 = eps;
    for (auto& v : z2.data) v *= 2.5;
    for (auto& v : e2.data) v *= 2.5;
    const Image scaled = add_noise_masked(z2, s, t, e2, mask);
    for (std::size_t i = 0; i < out.data.size(); ++i) EXPECT_NEAR(scaled.data[i], 2.5 * out.data[i], 1e-12);
}

TEST(AddNoise, Errors) {
    std::mt19937_64 rng(3);
    const NoiseSchedule s = NoiseSchedule::linear();
    const Image z0 = random_image(4, 4, 3, rng);
    EXPECT_THROW(add_noise_masked(z0, s, 100, z0, Image(4, 4, 1)), InvalidArgumentError);
    EXPECT_THROW(add_noise_masked(z0, s, -1, z0, Image(4, 4, 1)), InvalidArgumentError);
    EXPECT_THROW(add_noise_masked(z0, s, 3, random_image(4, 5, 3, rng), Image(4, 4, 1)), DimensionError);
    EXPECT_THROW(add_noise_masked(z0, s, 3, z0, Image(5, 4, 1)), DimensionError);
}

TEST(Masks, DeterministicBinaryAndBounded) {
    EXPECT_EQ(sample_masks(1, 16, 16, 9).front().data, sample_masks(1, 16, 16, 9).front().data);
    const auto masks = sample_masks(1000, 16, 16, 10);
    double mean = 0.0;
    for (const auto& m : masks) {
        const double c = mask_coverage(m);
        EXPECT_GE(c, 0.10);
        EXPECT_LE(c, 0.60);
        for (double v : m.data) EXPECT_TRUE(v == 0.0 || v == 1.0);
        mean += c / masks.size();
    }
    EXPECT_GE(mean, 0.2);
    EXPECT_LE(mean, 0.5);
}

TEST(LoraTrain, ZeroLearningRateLeavesParameters) {
    ToyDenoiser model(tiny_config(), 1);
    for (auto& l : model.linears()) l.delta().b.setConstant(0.01);
    const auto before = model.export_deltas();
    const auto data = two_color_set(8, 4);
    AdapterOptimizer opt;
    opt.lr = 0.0;
    std::mt19937_64 rng(5);
    const double loss = lora_train_step(model, std::span<const TrainingExample>(data), NoiseSchedule::linear(), opt, rng);
    EXPECT_TRUE(std::isfinite(loss));
    const auto after = model.export_deltas();
    for (std::size_t i = 0; i < before.size(); ++i) {
        EXPECT_EQ(before[i].delta.a, after[i].delta.a);
        EXPECT_EQ(before[i].delta.b, after[i].delta.b);
    }
}

TEST(LoraTrain, ExactPredictorHasZeroLoss) {
    const NoiseSchedule s = NoiseSchedule::linear();
    const auto data = two_color_set(1, 6);
    OraclePredictor p{&s, &data[0].z0, &data[0].mask};
    AdapterOptimizer opt;
    std::mt19937_64 rng(7);
    EXPECT_NEAR(lora_train_step(p, std::span<const TrainingExample>(data), s, opt, rng), 0.0, 1e-20);
}

TEST(LoraTrain, RequiresTrainableAdapters) {
    ToyDenoiser model(tiny_config(), 1);
    for (auto& l : model.linears()) l.trainable = false;
    const auto data = two_color_set(2, 4);
    AdapterOptimizer opt;
    std::mt19937_64 rng(5);
    EXPECT_THROW(lora_train_step(model, std::span<const TrainingExample>(data), NoiseSchedule::linear(), opt, rng),
                 InvalidArgumentError);
}

TEST(LoraTrain, BaseWeightsNeverChange) {
    ToyDenoiser model(tiny_config(), 2);
    std::vector<Eigen::MatrixXd> weights;
    for (const auto& l : model.linears()) weights.push_back(l.weight());
    const auto data = two_color_set(8, 4);
    AdapterOptimizer opt;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 5; ++i) lora_train_step(model, std::span<const TrainingExample>(data), NoiseSchedule::linear(), opt, rng);
    for (std::size_t i = 0; i < weights.size(); ++i) EXPECT_EQ(model.linears()[i].weight(), weights[i]);
    bool moved = false;
    for (const auto& l : model.linears()) moved |= !l.delta().b.isZero(0.0);
    EXPECT_TRUE(moved);
}

TEST(LoraTrain, LossFallsOnTwoColorSet) {
    ToyDenoiser model(tiny_config(), 3);
    const auto data = two_color_set(32, 8);
    AdapterOptimizer opt;
    opt.lr = 3e-3;
    std::mt19937_64 rng(9);
    const NoiseSchedule s = NoiseSchedule::linear();
    std::vector<double> losses;
    for (int step = 0; step < 500; ++step) {
        std::vector<TrainingExample> batch;
        for (int b = 0; b < 8; ++b) batch.push_back(data[(step * 8 + b) % data.size()]);
        losses.push_back(lora_train_step(model, std::span<const TrainingExample>(batch), s, opt, rng));
    }
    auto smoothed = [&](int end) {
        double sum = 0.0;
        for (int i = end - 25; i < end; ++i) sum += losses[i];
        return sum / 25.0;
    };
    EXPECT_LT(smoothed(500), 0.7 * smoothed(50)) << smoothed(50) << " -> " << smoothed(500);
}

TEST(LoraTrain, MaskedLossGradientMatchesDifferences) {
    // Miniature denoiser: embed, one attention block, head.
    DenoiserConfig cfg = tiny_config();
    cfg.image_size = 4;
    ToyDenoiser model(cfg, 5);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& l : model.linears()) {
        for (int i = 0; i < l.delta().b.size(); ++i) l.delta().b.data()[i] = n(rng);
    }
    const NoiseSchedule s = NoiseSchedule::linear();
    const Image z0 = random_image(4, 4, 3, rng), eps = gaussian_noise(4, 4, 3, rng);
    const Image mask = sample_masks(1, 4, 4, 12).front();
    const int t = 37;
    const Image noisy = add_noise_masked(z0, s, t, eps, mask);
    auto loss = [&](const ToyDenoiser& m) {
        DenoiserTape tape;
        return epsilon_mse(eps, m.forward_train(DenoiserInput{&noisy, 1, t}, tape));
    };
    DenoiserTape tape;
    const Image pred = model.forward_train(DenoiserInput{&noisy, 1, t}, tape);
    Image d(pred.width, pred.height, pred.channels);
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = 2.0 * (pred.data[i] - eps.data[i]) / d.data.size();
    DenoiserGrads g = model.zero_grads(false);
    model.backward(tape, d, g, false);
    const double h = 1e-6;
    int checked = 0;
    for (std::size_t li = 0; li < model.linears().size(); ++li) {
        for (int e = 0; e < 3; ++e) {
            const int r = e % model.linears()[li].delta().rank();
            const int c = (e * 5) % model.linears()[li].d_in();
            ToyDenoiser p = model, m = model;
            p.linears()[li].delta().a(r, c) += h;
            m.linears()[li].delta().a(r, c) -= h;
            const double fd = (loss(p) - loss(m)) / (2 * h);
            const double an = g.linear[li].a(r, c);
            if (std::max(std::abs(fd), std::abs(an)) < 1e-8) continue;
            EXPECT_LT(std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)), 1e-3) << model.linear_names()[li];
            ++checked;
        }
    }
    EXPECT_GT(checked, 10);
}

TEST(Denoiser, SizeAndCheckpoints) {
    DenoiserConfig cfg;
    cfg.image_size = 16;
    cfg.patch = 4;
    ToyDenoiser model(cfg, 3);
    EXPECT_LT(model.parameter_count(), 1000000u);
    const auto dir = std::filesystem::temp_directory_path();
    model.save_base(dir / "gsedit_test_base.tdnb");
    ToyDenoiser back = ToyDenoiser::load_base(dir / "gsedit_test_base.tdnb");
    std::mt19937_64 rng(1);
    const Image x = random_image(16, 16, 3, rng);
    const Image a = model.predict(DenoiserInput{&x, 2, 50}), b = back.predict(DenoiserInput{&x, 2, 50});
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-4);

    for (auto& l : model.linears()) l.delta().b.setConstant(0.02);
    save_deltas(model.export_deltas(), dir / "gsedit_test_denoiser.lora");
    back.import_deltas(load_deltas(dir / "gsedit_test_denoiser.lora"));
    // the delta file stores f32
    const Eigen::MatrixXd rounded = model.export_deltas()[3].delta.b.cast<float>().cast<double>();
    EXPECT_EQ(back.export_deltas()[3].delta.b, rounded);
    ToyDenoiser other(tiny_config(), 1);
    EXPECT_THROW(other.import_deltas(model.export_deltas()), DimensionError);
}

TEST(Multiview, SymmetricInputsGiveIdenticalOutputs) {
    ToyDenoiser model(tiny_config(), 4);
    std::mt19937_64 rng(2);
    const Image img = random_image(8, 8, 3, rng);
    const std::vector<Image> imgs{img, img};
    const std::vector<int> labels{1, 1};
    MultiviewEditConfig cfg;
    cfg.seed = 77;
    const auto r = multiview_reference_edit(imgs, labels, model, NoiseSchedule::linear(), cfg);
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(r.edited[0].data[i], r.edited[1].data[i], 1e-5);
}

TEST(Multiview, DisabledHooksEqualIndependentRuns) {
    ToyDenoiser model(tiny_config(), 4);
    std::mt19937_64 rng(3);
    const std::vector<Image> imgs{random_image(8, 8, 3, rng), random_image(8, 8, 3, rng), random_image(8, 8, 3, rng)};
    const std::vector<int> labels{0, 2, 3};
    const NoiseSchedule s = NoiseSchedule::linear();
    MultiviewEditConfig cfg;
    cfg.reference_hooks = false;
    cfg.seed = 5;
    const auto r = multiview_reference_edit(imgs, labels, model, s, cfg);
    for (std::size_t v = 0; v < imgs.size(); ++v) {
        EXPECT_EQ(r.edited[v].data, plain_denoise(imgs[v], labels[v], model, s, cfg.start_step, cfg.seed).data);
    }
}

TEST(Multiview, HooksChangeNonReferenceViewsOnly) {
    ToyDenoiser model(tiny_config(), 4);
    std::mt19937_64 rng(4);
    const std::vector<Image> imgs{random_image(8, 8, 3, rng), random_image(8, 8, 3, rng)};
    const std::vector<int> labels{1, 1};
    const NoiseSchedule s = NoiseSchedule::linear();
    MultiviewEditConfig on;
    on.seed = 9;
    MultiviewEditConfig off = on;
    off.reference_hooks = false;
    const auto a = multiview_reference_edit(imgs, labels, model, s, on);
    const auto b = multiview_reference_edit(imgs, labels, model, s, off);
    EXPECT_EQ(a.edited[0].data, b.edited[0].data);
    EXPECT_NE(a.edited[1].data, b.edited[1].data);
    EXPECT_THROW(multiview_reference_edit(std::vector<Image>{imgs[0], random_image(4, 4, 3, rng)}, labels, model, s, on),
                 DimensionError);
}

TEST(Multiview, Deterministic) {
    ToyDenoiser model(tiny_config(), 4);
    std::mt19937_64 rng(5);
    const std::vector<Image> imgs{random_image(8, 8, 3, rng), random_image(8, 8, 3, rng)};
    const std::vector<int> labels{2, 2};
    MultiviewEditConfig cfg;
    cfg.seed = 1;
    cfg.record_banks = true;
    const auto a = multiview_reference_edit(imgs, labels, model, NoiseSchedule::linear(), cfg);
    const auto b = multiview_reference_edit(imgs, labels, model, NoiseSchedule::linear(), cfg);
    EXPECT_EQ(a.edited[1].data, b.edited[1].data);
    EXPECT_EQ(a.banks.steps(), cfg.start_step + 1);
    EXPECT_EQ(a.banks.blocks(), 1);
}

TEST(Persona, LambdaOneIsPlainDenoise) {
    ToyDenoiser model(tiny_config(), 6);
    std::mt19937_64 rng(6);
    const std::vector<Image> imgs{random_image(8, 8, 3, rng), random_image(8, 8, 3, rng)};
    const std::vector<int> labels{1, 1};
    const NoiseSchedule s = NoiseSchedule::linear();
    MultiviewEditConfig mv;
    mv.record_banks = true;
    const auto banks = multiview_reference_edit(imgs, labels, model, s, mv).banks;
    const Image held = random_image(8, 8, 3, rng);
    PersonaConfig pc;
    pc.lambda = 1.0;
    pc.seed = 44;
    EXPECT_EQ(persona_denoise(held, 1, banks, model, s, pc).data, plain_denoise(held, 1, model, s, pc.start_step, 44).data);
    EXPECT_EQ(persona_denoise(held, 1, KVBanks{}, model, s, pc).data,
              plain_denoise(held, 1, model, s, pc.start_step, 44).data);
}

TEST(Persona, SelfBankIsPlainDenoise) {
    ToyDenoiser model(tiny_config(), 7);
    std::mt19937_64 rng(7);
    const Image img = random_image(8, 8, 3, rng);
    const NoiseSchedule s = NoiseSchedule::linear();
    // Record the latent's own plain trajectory.
    MultiviewEditConfig mv;
    mv.reference_hooks = false;
    mv.record_banks = true;
    mv.seed = 31;
    const auto banks = multiview_reference_edit(std::vector<Image>{img, img}, std::vector<int>{3, 3}, model, s, mv).banks;
    const Image plain = plain_denoise(img, 3, model, s, mv.start_step, 31);
    for (double lambda : {0.0, 0.3, 0.55}) {
        PersonaConfig pc;
        pc.lambda = lambda;
        pc.seed = 31;
        const Image out = persona_denoise(img, 3, banks, model, s, pc);
        for (std::size_t i = 0; i < out.data.size(); ++i) EXPECT_NEAR(out.data[i], plain.data[i], 1e-9);
    }
}

TEST(Persona, Errors) {
    ToyDenoiser model(tiny_config(), 8);
    std::mt19937_64 rng(8);
    const Image img = random_image(8, 8, 3, rng);
    const NoiseSchedule s = NoiseSchedule::linear();
    PersonaConfig pc;
    EXPECT_THROW(persona_denoise(img, 0, KVBanks{}, model, s, pc), InvalidArgumentError);
    DenoiserConfig two = tiny_config();
    two.blocks = 2;
    ToyDenoiser deeper(two, 8);
    MultiviewEditConfig mv;
    mv.record_banks = true;
    const auto banks = multiview_reference_edit(std::vector<Image>{img, img}, std::vector<int>{0, 0}, deeper, s, mv).banks;
    EXPECT_THROW(persona_denoise(img, 0, banks, model, s, pc), DimensionError);
}

TEST(Mannequins, LabelsAndModes) {
    const auto data = generate_mannequins(200, 16, 3);
    int bimodal_modes[2] = {0, 0};
    for (const auto& s : data) {
        EXPECT_GE(mask_coverage(s.garment_mask), 0.05);
        if (s.label >= 2) ++bimodal_modes[s.mode];
        // Edge pixels blend with body and background, so the mean drifts; it must still sit
        // nearest its own palette entry.
        const Eigen::Vector3d mean = masked_mean_color(s.image, s.garment_mask);
        const double own = (mean - garment_color(s.label, s.mode)).norm();
        for (int l = 0; l < kGarmentLabels; ++l) {
            for (int m = 0; m < garment_modes(l); ++m) {
                if (l != s.label || m != s.mode) EXPECT_LT(own, (mean - garment_color(l, m)).norm());
            }
        }
        // Some torso pixel is fully covered and carries the exact garment color.
        bool exact = false;
        for (int y = 0; y < 16 && !exact; ++y) {
            for (int x = 0; x < 16 && !exact; ++x) {
                exact = (Eigen::Vector3d(s.image.at(x, y, 0), s.image.at(x, y, 1), s.image.at(x, y, 2)) -
                         garment_color(s.label, s.mode))
                            .cwiseAbs()
                            .maxCoeff() < 1e-12;
            }
        }
        EXPECT_TRUE(exact);
    }
    EXPECT_GT(bimodal_modes[0], 20);
    EXPECT_GT(bimodal_modes[1], 20);
    EXPECT_EQ(garment_modes(0), 1);
    EXPECT_EQ(garment_modes(3), 2);
}
