#include "gsedit/errors.hpp"
#include "gsedit/losses.hpp"
#include "gsedit/mask_lift.hpp"
#include "gsedit/optimization.hpp"
#include "gsedit/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

using namespace gsedit;

namespace {

Image random_image(int w, int h, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

// Straightforward restatement of the patch-statistics distance.
double box_half(const Image& img, int x, int y, int c) {
    double s = 0.0;
    int n = 0;
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
            if (2 * x + dx < img.width && 2 * y + dy < img.height) {
                s += img.at(2 * x + dx, 2 * y + dy, c);
                ++n;
            }
    return s / n;
}

Image half(const Image& img) {
    Image out((img.width + 1) / 2, (img.height + 1) / 2, img.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = box_half(img, x, y, c);
    return out;
}

double level_distance(const Image& a, const Image& b) {
    std::vector<double> terms;
    for (int y0 = 0; y0 < a.height; y0 += 8) {
        for (int x0 = 0; x0 < a.width; x0 += 8) {
            for (int c = 0; c < a.channels; ++c) {
                std::vector<double> pa, pb;
                for (int y = y0; y < std::min(a.height, y0 + 8); ++y)
                    for (int x = x0; x < std::min(a.width, x0 + 8); ++x) {
                        pa.push_back(a.at(x, y, c));
                        pb.push_back(b.at(x, y, c));
                    }
                auto moments = [](const std::vector<double>& v) {
                    double m = 0.0, q = 0.0;
                    for (double x : v) m += x;
                    m /= v.size();
                    for (double x : v) q += (x - m) * (x - m);
                    return std::pair{m, q / v.size()};
                };
                const auto [ma, va] = moments(pa);
                const auto [mb, vb] = moments(pb);
                terms.push_back(std::pow(ma - mb, 2) + std::pow(va - vb, 2));
            }
        }
    }
    double stats = 0.0;
    for (double t : terms) stats += t;
    stats /= terms.size();

    std::vector<double> diffs;
    for (int c = 0; c < a.channels; ++c) {
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x + 1 < a.width; ++x)
                diffs.push_back(std::abs((a.at(x + 1, y, c) - a.at(x, y, c)) - (b.at(x + 1, y, c) - b.at(x, y, c))));
        for (int y = 0; y + 1 < a.height; ++y)
            for (int x = 0; x < a.width; ++x)
                diffs.push_back(std::abs((a.at(x, y + 1, c) - a.at(x, y, c)) - (b.at(x, y + 1, c) - b.at(x, y, c))));
    }
    double edges = 0.0;
    for (double d : diffs) edges += d;
    if (!diffs.empty()) edges /= diffs.size();
    return stats + edges;
}

double naive_perceptual(Image a, Image b) {
    double total = 0.0;
    for (int s = 0; s < 3; ++s) {
        total += level_distance(a, b);
        a = half(a);
        b = half(b);
    }
    return total / 3.0;
}

bool bit_equal(const Gaussian3D& a, const Gaussian3D& b) {
    auto same = [](const float* x, const float* y, std::size_t n) { return std::memcmp(x, y, n * sizeof(float)) == 0; };
    return same(a.mean.data(), b.mean.data(), 3) && same(a.rotation.data(), b.rotation.data(), 4) &&
           same(a.log_scale.data(), b.log_scale.data(), 3) && same(&a.opacity_logit, &b.opacity_logit, 1) &&
           a.sh.size() == b.sh.size() && same(a.sh.data(), b.sh.data(), a.sh.size()) && a.editable == b.editable;
}

// Small labeled mannequin shared by the edit-loop tests.
struct EditFixture {
    GaussianScene scene;
    std::vector<Camera> cams;
    std::vector<Image> masks;
};

const EditFixture& edit_fixture() {
    static const EditFixture fx = [] {
        EditFixture f;
        MannequinScene m = make_mannequin_scene(Eigen::Vector3d(0.8, 0.2, 0.2), 3);
        f.cams = orbit_cameras(mannequin_orbit(4, 32));
        for (std::size_t i = 0; i < m.scene.size(); ++i) m.scene[i].editable = m.garment[i];
        for (const auto& cam : f.cams) {
            Image sil = render_editable_silhouette(m.scene, cam);
            for (auto& v : sil.data) v = v >= 0.5 ? 1.0 : 0.0;
            f.masks.push_back(sil);
        }
        f.scene = m.scene;
        return f;
    }();
    return fx;
}

EditConfig quick_edit(int iters) {
    EditConfig cfg;
    cfg.edit_iters = iters;
    cfg.refresh_interval = iters + 1;
    cfg.views = 2;
    return cfg;
}

class ThrowingEditor final : public ImageEditor {
public:
    std::string name() const override { return "throws"; }
    Image edit(const Image&, const GarmentCondition&, const Image&, std::uint64_t) override {
        throw std::runtime_error("model unavailable");
    }
};

class OutOfRangeEditor final : public ImageEditor {
public:
    std::string name() const override { return "out-of-range"; }
    Image edit(const Image& img, const GarmentCondition&, const Image&, std::uint64_t) override {
        Image out = img;
        out.data[0] = 1.5;
        return out;
    }
};

} // namespace

TEST(Mae, ExampleValues) {
    Image a(2, 1, 1), b(2, 1, 1);
    a.data = {0.0, 0.5};
    b.data = {1.0, 0.5};
    EXPECT_DOUBLE_EQ(mae_loss(a, b), 0.5);
    EXPECT_DOUBLE_EQ(mae_loss(a, a), 0.0);
}

TEST(Mae, MatchesOracleAndGradient) {
    const Image a = random_image(9, 7, 3, 1), b = random_image(9, 7, 3, 2);
    double ref = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) ref += std::abs(a.data[i] - b.data[i]);
    ref /= a.data.size();
    EXPECT_NEAR(mae_loss(a, b), ref, 1e-12);
    const Image g = mae_loss_grad(a, b);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double s = a.data[i] > b.data[i] ? 1.0 : -1.0;
        EXPECT_DOUBLE_EQ(g.data[i], s / a.data.size());
    }
    EXPECT_THROW(mae_loss(a, random_image(9, 7, 1, 3)), DimensionError);
}

TEST(Perceptual, ZeroOnIdenticalAndSymmetric) {
    const Image a = random_image(20, 13, 3, 4), b = random_image(20, 13, 3, 5);
    EXPECT_EQ(perceptual_distance(a, a), 0.0);
    EXPECT_GT(perceptual_distance(a, b), 0.0);
    EXPECT_NEAR(perceptual_distance(a, b), perceptual_distance(b, a), 1e-14);
    EXPECT_THROW(perceptual_distance(a, random_image(20, 12, 3, 6)), DimensionError);
}

TEST(Perceptual, MatchesIndependentImplementation) {
    for (auto [w, h] : {std::pair{32, 32}, std::pair{21, 17}, std::pair{5, 3}}) {
        const Image a = random_image(w, h, 3, 10 + w), b = random_image(w, h, 3, 20 + h);
        EXPECT_NEAR(perceptual_distance(a, b), naive_perceptual(a, b), 1e-9) << w << "x" << h;
    }
}

TEST(Perceptual, GradientMatchesFiniteDifferences) {
    const Image a = random_image(19, 14, 3, 7), b = random_image(19, 14, 3, 8);
    const PatchStatsDistance dist;
    Image g;
    dist.evaluate(a, b, &g);
    ASSERT_TRUE(g.same_shape(a));
    // The edge term is piecewise linear; a small step rarely crosses a kink.
    const double h = 1e-7;
    int checked = 0;
    for (std::size_t i = 0; i < a.data.size(); i += 7) {
        Image p = a, m = a;
        p.data[i] += h;
        m.data[i] -= h;
        const double fd = (dist(p, b) - dist(m, b)) / (2 * h);
        EXPECT_NEAR(g.data[i], fd, 1e-6 + 1e-4 * std::abs(fd)) << "index " << i;
        ++checked;
    }
    EXPECT_GT(checked, 100);
}

TEST(EditLoss, CombinesTermsExactly) {
    const Image r = random_image(16, 16, 3, 11), t = random_image(16, 16, 3, 12);
    const PatchStatsDistance dist;
    Image grad;
    const EditLoss l = edit_loss(r, t, 10.0, 15.0, dist, &grad);
    EXPECT_EQ(l.mae, mae_loss(r, t));
    EXPECT_EQ(l.perceptual, dist(r, t));
    EXPECT_EQ(l.total, 10.0 * l.mae + 15.0 * l.perceptual);

    Image gp;
    dist.evaluate(r, t, &gp);
    const Image gm = mae_loss_grad(r, t);
    for (std::size_t i = 0; i < grad.data.size(); ++i) EXPECT_NEAR(grad.data[i], 10.0 * gm.data[i] + 15.0 * gp.data[i], 1e-12);
}

TEST(Schedule, RefreshCountGrid) {
    EXPECT_EQ(refresh_count(4000, 2500), 1);
    for (int iters : {1, 2, 10, 99, 100, 101, 2500, 2501, 4000, 5000}) {
        for (int interval : {1, 3, 10, 100, 2500, 10000}) {
            int events = 0;
            for (int it = 0; it < iters; ++it) events += is_refresh_iteration(it, interval);
            EXPECT_EQ(refresh_count(iters, interval), (iters - 1) / interval) << iters << "/" << interval;
            EXPECT_EQ(events, refresh_count(iters, interval));
        }
    }
    EXPECT_FALSE(is_refresh_iteration(0, 1));
    EXPECT_TRUE(is_refresh_iteration(2500, 2500));
}

TEST(LearningRates, PositionDecayEndpoints) {
    LearningRates lr;
    lr.position_scale = 2.0;
    EXPECT_NEAR(lr.position_at(0, 1000), 2.0 * 1.6e-4, 1e-15);
    EXPECT_NEAR(lr.position_at(999, 1000), 2.0 * 1.6e-6, 1e-15);
    EXPECT_NEAR(lr.position_at(5000, 1000), 2.0 * 1.6e-6, 1e-15);
    const double t = 500.0 / 999.0;
    EXPECT_NEAR(lr.position_at(500, 1000), 2.0 * std::exp((1 - t) * std::log(1.6e-4) + t * std::log(1.6e-6)), 1e-15);
}

TEST(TrainingLog, WritesOneJsonObjectPerLine) {
    std::ostringstream out;
    TrainingLog log(&out);
    log.record({{"iteration", 0}, {"loss", 1.5}});
    log.record({{"iteration", 1}, {"loss", 0.5}});
    EXPECT_EQ(log.records(), 2u);
    std::istringstream in(out.str());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j.at("iteration").get<int>(), n++);
    }
    EXPECT_EQ(n, 2);
    TrainingLog sink;
    sink.record({{"x", 1}});
}

TEST(SceneAdam, MaskedGaussiansUntouched) {
    RandomSceneOptions opts;
    opts.count = 6;
    opts.sh_degree = 1;
    GaussianScene scene = random_scene(opts, 9);
    const GaussianScene before = scene;
    SceneGradients g(scene.size(), 1);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        g.mean[i] = Eigen::Vector3d(1, -1, 0.5);
        g.rotation[i] = Eigen::Vector4d(0.1, 0.2, -0.3, 0.4);
        g.log_scale[i] = Eigen::Vector3d(1, 1, 1);
        g.opacity_logit[i] = -1.0;
    }
    for (auto& v : g.sh) v = 0.5;
    const std::vector<bool> update{true, false, true, false, false, true};
    SceneAdam adam(LearningRates{});
    adam.step(scene, g, 1e-3, &update);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        EXPECT_EQ(bit_equal(scene[i], before[i]), !update[i]) << i;
        if (update[i]) {
            // First Adam step moves each coordinate by about -lr * sign(g).
            EXPECT_NEAR(scene[i].mean.x() - before[i].mean.x(), -1e-3, 1e-6);
            EXPECT_NEAR(scene[i].opacity_logit - before[i].opacity_logit, 5e-2, 1e-5);
            EXPECT_NEAR(scene[i].unit_rotation().norm(), 1.0, 1e-6);
        }
    }
}

TEST(Fit, ZeroIterationsReturnsInitialization) {
    const auto cams = orbit_cameras(OrbitSpec{.center = Eigen::Vector3d::Zero(), .frames = 3, .width = 16, .height = 16, .focal = 20});
    std::vector<Image> imgs(3, random_image(16, 16, 3, 5));
    FitConfig cfg;
    cfg.iters = 0;
    cfg.init_points = 50;
    const FitResult r = fit_scene(imgs, cams, cfg);
    const GaussianScene init = initialize_from_frusta(imgs, cams, cfg);
    ASSERT_EQ(r.scene.size(), init.size());
    for (std::size_t i = 0; i < init.size(); ++i) EXPECT_TRUE(bit_equal(r.scene[i], init[i]));
    EXPECT_TRUE(r.losses.empty());
}

TEST(Fit, ConvergesOnSolidColorViews) {
    const auto cams = orbit_cameras(OrbitSpec{.center = Eigen::Vector3d::Zero(), .frames = 4, .width = 16, .height = 16, .focal = 20});
    Image solid(16, 16, 3);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            solid.at(x, y, 0) = 0.3;
            solid.at(x, y, 1) = 0.6;
            solid.at(x, y, 2) = 0.2;
        }
    std::vector<Image> imgs(4, solid);
    FitConfig cfg;
    cfg.iters = 400;
    cfg.init_points = 300;
    cfg.densify = false;
    const FitResult r = fit_scene(imgs, cams, cfg);
    ASSERT_EQ(r.losses.size(), 400u);
    EXPECT_LT(r.losses.back(), 0.25 * r.losses.front());
    EXPECT_LT(r.losses.back(), 0.03);
}

TEST(Fit, RejectsBadInputs) {
    const auto cams = orbit_cameras(OrbitSpec{.frames = 2, .width = 8, .height = 8, .focal = 10});
    std::vector<Image> imgs(2, Image(8, 8, 3));
    FitConfig cfg;
    cfg.iters = 1;
    EXPECT_THROW(fit_scene(std::span(imgs).first(1), std::span(cams).first(1), cfg), InvalidArgumentError);
    std::vector<Image> wrong{Image(8, 8, 3), Image(9, 8, 3)};
    EXPECT_THROW(fit_scene(wrong, cams, cfg), DimensionError);
}

TEST(Editors, OracleAndIdentity) {
    const Image img = random_image(6, 5, 3, 1);
    Image mask(6, 5, 1);
    mask.at(2, 2) = 1.0;
    mask.at(3, 1) = 0.25;
    IdentityEditor id;
    EXPECT_EQ(id.edit(img, {}, mask, 0).data, img.data);
    OracleRecolorEditor oracle(Eigen::Vector3d(0.0, 0.0, 1.0));
    const Image out = oracle.edit(img, {}, mask, 0);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x)
            for (int c = 0; c < 3; ++c) {
                const double m = mask.at(x, y), t = c == 2 ? 1.0 : 0.0;
                EXPECT_DOUBLE_EQ(out.at(x, y, c), (1 - m) * img.at(x, y, c) + m * t);
            }
}

TEST(EditConfig, Validation) {
    EditConfig ok;
    EXPECT_NO_THROW(ok.validate());
    for (auto mutate : std::vector<void (*)(EditConfig&)>{
             [](EditConfig& c) { c.lambda = 1.5; }, [](EditConfig& c) { c.lambda = -0.1; },
             [](EditConfig& c) { c.views = 0; }, [](EditConfig& c) { c.refresh_interval = 0; },
             [](EditConfig& c) { c.edit_iters = -1; }, [](EditConfig& c) { c.lambda1 = -1; },
             [](EditConfig& c) { c.tile_size = 0; }}) {
        EditConfig c;
        mutate(c);
        EXPECT_THROW(c.validate(), InvalidArgumentError);
    }
}

TEST(Edit, IdentityEditorIsAFixedPoint) {
    const auto& fx = edit_fixture();
    IdentityEditor id;
    const EditResult r = run_edit(fx.scene, fx.cams, fx.masks, id, quick_edit(20));
    EXPECT_EQ(r.initial_loss, 0.0);
    EXPECT_EQ(r.final_loss, 0.0);
    for (std::size_t i = 0; i < fx.scene.size(); ++i) ASSERT_TRUE(bit_equal(r.scene[i], fx.scene[i])) << i;
}

TEST(Edit, ZeroLearningRateIsNoOp) {
    const auto& fx = edit_fixture();
    OracleRecolorEditor oracle(Eigen::Vector3d(0, 0, 1));
    EditConfig cfg = quick_edit(10);
    cfg.lr = LearningRates{0, 0, 1, 0, 0, 0, 0};
    const EditResult r = run_edit(fx.scene, fx.cams, fx.masks, oracle, cfg);
    for (std::size_t i = 0; i < fx.scene.size(); ++i) ASSERT_TRUE(bit_equal(r.scene[i], fx.scene[i])) << i;
    EXPECT_DOUBLE_EQ(r.final_loss, r.initial_loss);
}

TEST(Edit, RecolorReducesLossAndFreezesNonEditable) {
    const auto& fx = edit_fixture();
    OracleRecolorEditor oracle(Eigen::Vector3d(0, 0, 1));
    std::ostringstream out;
    TrainingLog log(&out);
    EditConfig cfg = quick_edit(300);
    cfg.refresh_interval = 150;
    cfg.log = &log;
    cfg.log_every = 50;
    const EditResult r = run_edit(fx.scene, fx.cams, fx.masks, oracle, cfg);
    EXPECT_EQ(r.refresh_events, 1);
    EXPECT_EQ(r.losses.size(), 300u);
    EXPECT_LT(r.final_loss, 0.9 * r.initial_loss);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < fx.scene.size(); ++i) {
        if (!fx.scene[i].editable) ASSERT_TRUE(bit_equal(r.scene[i], fx.scene[i])) << i;
        else changed += !bit_equal(r.scene[i], fx.scene[i]);
    }
    EXPECT_GT(changed, fx.scene.editable_count() / 2);
    EXPECT_GE(log.records(), 8u);
    EXPECT_NE(out.str().find("\"refresh\""), std::string::npos);
}

TEST(Edit, RandomViewOrderIsDeterministicPerSeed) {
    const auto& fx = edit_fixture();
    OracleRecolorEditor oracle(Eigen::Vector3d(0, 0, 1));
    EditConfig cfg = quick_edit(30);
    cfg.random_view_order = true;
    cfg.seed = 5;
    const EditResult a = run_edit(fx.scene, fx.cams, fx.masks, oracle, cfg);
    const EditResult b = run_edit(fx.scene, fx.cams, fx.masks, oracle, cfg);
    EXPECT_EQ(a.losses, b.losses);
}

TEST(Edit, Errors) {
    const auto& fx = edit_fixture();
    ThrowingEditor bad;
    EXPECT_THROW(run_edit(fx.scene, fx.cams, fx.masks, bad, quick_edit(5)), EditorError);
    OutOfRangeEditor range;
    EXPECT_THROW(run_edit(fx.scene, fx.cams, fx.masks, range, quick_edit(5)), EditorError);

    GaussianScene unlabeled = fx.scene;
    for (auto& g : unlabeled.gaussians()) g.editable = false;
    IdentityEditor id;
    EXPECT_THROW(run_edit(unlabeled, fx.cams, fx.masks, id, quick_edit(5)), InvalidArgumentError);
    EXPECT_THROW(run_edit(fx.scene, fx.cams, std::span(fx.masks).first(2), id, quick_edit(5)), DimensionError);
    EditConfig invalid = quick_edit(5);
    invalid.lambda = 2.0;
    EXPECT_THROW(run_edit(fx.scene, fx.cams, fx.masks, id, invalid), InvalidArgumentError);
}

TEST(Edit, ThrowingEditorMessageNamesView) {
    const auto& fx = edit_fixture();
    ThrowingEditor bad;
    try {
        run_edit(fx.scene, fx.cams, fx.masks, bad, quick_edit(5));
        FAIL();
    } catch (const EditorError& e) {
        EXPECT_NE(std::string(e.what()).find("view 0"), std::string::npos) << e.what();
    }
}
