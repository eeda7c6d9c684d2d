#include "gsedit/errors.hpp"
#include "gsedit/scene.hpp"
#include "gsedit/scene_io.hpp"
#include "gsedit/sh.hpp"
#include "gsedit/synthetic.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace gsedit;

namespace {

Gaussian3D make(const Eigen::Vector4f& q, const Eigen::Vector3f& s, int degree = 0) {
    return Gaussian3D::from_natural(Eigen::Vector3f::Zero(), q, s, 0.5f, degree);
}

const Eigen::Vector4f kIdentity(1, 0, 0, 0);

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof(float)) == 0; }

void expect_bit_equal(const GaussianScene& a, const GaussianScene& b) {
    ASSERT_EQ(a.size(), b.size());
    ASSERT_EQ(a.sh_degree(), b.sh_degree());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (int c = 0; c < 3; ++c) EXPECT_TRUE(same_bits(a[i].mean[c], b[i].mean[c]));
        for (int c = 0; c < 4; ++c) EXPECT_TRUE(same_bits(a[i].rotation[c], b[i].rotation[c]));
        for (int c = 0; c < 3; ++c) EXPECT_TRUE(same_bits(a[i].log_scale[c], b[i].log_scale[c]));
        EXPECT_TRUE(same_bits(a[i].opacity_logit, b[i].opacity_logit));
        ASSERT_EQ(a[i].sh.size(), b[i].sh.size());
        for (std::size_t k = 0; k < a[i].sh.size(); ++k) EXPECT_TRUE(same_bits(a[i].sh[k], b[i].sh[k]));
        EXPECT_EQ(a[i].editable, b[i].editable);
    }
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("gsedit_test_" + name);
}

} // namespace

TEST(Covariance, IsotropicUnit) {
    EXPECT_TRUE(covariance_of(make(kIdentity, {1, 1, 1})).isApprox(Eigen::Matrix3d::Identity(), 1e-12));
}

TEST(Covariance, AxisAligned) {
    const Eigen::Matrix3d expected = Eigen::Vector3d(4, 1, 1).asDiagonal();
    // log-scale is stored as float, so exp(log 2) is only accurate to float precision
    EXPECT_TRUE(covariance_of(make(kIdentity, {2, 1, 1})).isApprox(expected, 1e-6));
}

TEST(Covariance, QuarterTurnAboutZ) {
    const float h = static_cast<float>(std::sqrt(0.5));
    const Eigen::Matrix3d cov = covariance_of(make({h, 0, 0, h}, {2, 1, 1}));
    // Direct product with an explicit rotation matrix.
    Eigen::Matrix3d r;
    r << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    const Eigen::Matrix3d expected = r * Eigen::Vector3d(4, 1, 1).asDiagonal() * r.transpose();
    EXPECT_TRUE(cov.isApprox(expected, 1e-6));
    EXPECT_NEAR(cov(0, 0), 1.0, 1e-6);
    EXPECT_NEAR(cov(1, 1), 4.0, 1e-6);
}

TEST(Covariance, EigenvaluesAreSquaredScales) {
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n(0.0f, 1.0f);
    std::uniform_real_distribution<float> u(0.1f, 3.0f);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Vector4f q(n(rng), n(rng), n(rng), n(rng));
        const Eigen::Vector3f s(u(rng), u(rng), u(rng));
        const Gaussian3D g = make(q, s);
        const Eigen::Matrix3d cov = covariance_of(g);
        EXPECT_TRUE(cov.isApprox(cov.transpose(), 1e-12));
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
        std::array<double, 3> ev{es.eigenvalues()[0], es.eigenvalues()[1], es.eigenvalues()[2]};
        const Eigen::Vector3d sd = g.scale();
        std::array<double, 3> s2{sd[0] * sd[0], sd[1] * sd[1], sd[2] * sd[2]};
        std::sort(ev.begin(), ev.end());
        std::sort(s2.begin(), s2.end());
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(ev[k], s2[k], 1e-6 * std::max(1.0, s2[k]));
        EXPECT_GE(ev[0], 0.0);
    }
}

TEST(Density, PeakAndUnitOffset) {
    const Gaussian3D g = make(kIdentity, {1, 1, 1});
    EXPECT_EQ(eval_density(g, Eigen::Vector3d::Zero()), 1.0);
    EXPECT_NEAR(eval_density(g, {1, 0, 0}), std::exp(-0.5), 1e-12);
}

TEST(Density, AnisotropicAgainstLinearSolve) {
    const float h = static_cast<float>(std::sqrt(0.5));
    const Gaussian3D g = make({h, 0, 0, h}, {2, 1, 1});
    const Eigen::Vector3d d(1, 1, 0);
    const Eigen::Matrix3d cov = covariance_of(g);
    const double expected = std::exp(-0.5 * d.dot(cov.fullPivLu().solve(d)));
    EXPECT_NEAR(eval_density(g, d), expected, 1e-9);
}

TEST(Density, MaximizedAtMean) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    const Gaussian3D g = Gaussian3D::from_natural({0.3f, -0.2f, 1.0f}, {0.9f, 0.1f, -0.3f, 0.2f}, {0.5f, 1.5f, 0.2f},
                                                  0.7f, 0);
    const Eigen::Vector3d mu = g.mean.cast<double>();
    for (int i = 0; i < 200; ++i) {
        const Eigen::Vector3d x = mu + Eigen::Vector3d(n(rng), n(rng), n(rng));
        EXPECT_LT(eval_density(g, x), 1.0);
        EXPECT_GT(eval_density(g, x), 0.0 - 1e-300);
    }
}

TEST(Density, DegenerateScaleFailsAtConstruction) {
    EXPECT_THROW(make(kIdentity, {1e-7f, 1, 1}), DegenerateCovarianceError);
    EXPECT_THROW(Gaussian3D::from_natural({0, 0, 0}, kIdentity, {1, 1, 1}, 1.0f, 0), InvalidArgumentError);
    EXPECT_THROW(Gaussian3D::from_natural({0, 0, 0}, {0, 0, 0, 0}, {1, 1, 1}, 0.5f, 0), InvalidArgumentError);
}

TEST(Sh, ZeroCoefficientsGiveHalfGray) {
    const std::vector<float> sh(48, 0.0f);
    const Eigen::Vector3d c = sh_to_rgb(sh, 3, Eigen::Vector3d(0, 0, 1));
    EXPECT_EQ(c, Eigen::Vector3d::Constant(0.5));
}

TEST(Sh, DegreeZeroConstant) {
    for (float a : {-3.0f, -0.5f, 0.0f, 0.7f, 2.5f}) {
        const std::vector<float> sh{a, a, a};
        const Eigen::Vector3d c = sh_to_rgb(sh, 0, Eigen::Vector3d(0, 1, 0));
        const double expected = std::clamp(0.28209479177387814 * a + 0.5, 0.0, 1.0);
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(c[k], expected, 1e-12);
    }
}

TEST(Sh, DegreeOneOddParity) {
    // Independent basis: Y1 = -C1 y, C1 z, -C1 x.
    const double c1 = std::sqrt(3.0 / (4.0 * std::numbers::pi));
    const std::vector<float> sh{0.1f, -0.2f, 0.05f, 0.3f, 0.1f, -0.2f, -0.25f, 0.2f, 0.15f, 0.1f, 0.05f, -0.3f};
    const Eigen::Vector3d d = Eigen::Vector3d(0.3, -0.5, 0.8).normalized();
    auto oracle = [&](const Eigen::Vector3d& dir) {
        const double y[4] = {0.5 / std::sqrt(std::numbers::pi), -c1 * dir.y(), c1 * dir.z(), -c1 * dir.x()};
        Eigen::Vector3d out;
        for (int ch = 0; ch < 3; ++ch) {
            double v = 0.5;
            for (int k = 0; k < 4; ++k) v += sh[k * 3 + ch] * y[k];
            out[ch] = v;
        }
        return out;
    };
    const Eigen::Vector3d plus = sh_color_unclamped(sh, 1, d), minus = sh_color_unclamped(sh, 1, -d);
    EXPECT_TRUE(plus.isApprox(oracle(d), 1e-9));
    EXPECT_TRUE(minus.isApprox(oracle(-d), 1e-9));
    // Even (degree-0) parts agree; degree-1 parts negate.
    const Eigen::Vector3d even = sh_color_unclamped(std::vector<float>(sh.begin(), sh.begin() + 3), 0, d);
    EXPECT_TRUE(((plus - even) + (minus - even)).isZero(1e-12));
}

TEST(Sh, BasisGradientMatchesDifferences) {
    const Eigen::Vector3d d = Eigen::Vector3d(0.2, 0.7, -0.4).normalized();
    std::vector<Eigen::Vector3d> grad(16);
    sh_basis_grad(3, d, grad);
    const double h = 1e-6;
    for (int a = 0; a < 3; ++a) {
        Eigen::Vector3d dp = d, dm = d;
        dp[a] += h;
        dm[a] -= h;
        std::vector<double> yp(16), ym(16);
        sh_basis(3, dp, yp);
        sh_basis(3, dm, ym);
        for (int k = 0; k < 16; ++k) EXPECT_NEAR(grad[k][a], (yp[k] - ym[k]) / (2 * h), 1e-6);
    }
}

TEST(SceneIo, EmptyScene) {
    const GaussianScene scene(2);
    const auto path = temp_path("empty.gspl");
    save_scene(scene, path);
    EXPECT_EQ(std::filesystem::file_size(path), 4u + 4 + 4 + 8);
    const GaussianScene back = load_scene(path);
    EXPECT_EQ(back.size(), 0u);
    EXPECT_EQ(back.sh_degree(), 2);
}

TEST(SceneIo, SingleGaussianDegreeThree) {
    GaussianScene scene(3);
    Gaussian3D g = Gaussian3D::from_natural({1.5f, -2.25f, 3.0f}, {0.5f, 0.5f, 0.5f, 0.5f}, {0.1f, 0.2f, 0.3f},
                                            0.42f, 3);
    for (std::size_t k = 0; k < g.sh.size(); ++k) g.sh[k] = 0.01f * static_cast<float>(k) - 0.2f;
    g.editable = true;
    scene.add(g);
    const auto bytes = encode_scene(scene);
    EXPECT_EQ(bytes.size(), 20u + 60u * 4u);  // 59 parameters plus the editable flag
    expect_bit_equal(scene, decode_scene(bytes));
}

TEST(SceneIo, LargeRandomRoundtrip) {
    RandomSceneOptions opts;
    opts.count = 10000;
    opts.sh_degree = 3;
    GaussianScene scene = random_scene(opts, 99);
    for (std::size_t i = 0; i < scene.size(); i += 3) scene[i].editable = true;
    const auto path = temp_path("large.gspl");
    save_scene(scene, path);
    expect_bit_equal(scene, load_scene(path));
}

TEST(SceneIo, DistinctErrors) {
    GaussianScene scene(1);
    scene.add(Gaussian3D::from_natural({0, 0, 0}, kIdentity, {1, 1, 1}, 0.5f, 1));
    const auto good = encode_scene(scene);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_scene(bad_magic), MalformedHeaderError);
    EXPECT_THROW(decode_scene(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)), MalformedHeaderError);

    auto bad_version = good;
    bad_version[4] = 7;
    EXPECT_THROW(decode_scene(bad_version), UnsupportedVersionError);

    EXPECT_THROW(decode_scene(std::vector<std::uint8_t>(good.begin(), good.end() - 3)), TruncatedPayloadError);
    EXPECT_THROW(load_scene(temp_path("does_not_exist.gspl")), IoError);
}

TEST(SceneIo, CameraJsonRoundtrip) {
    const auto dir = temp_path("cams");
    std::filesystem::create_directories(dir);
    std::vector<CameraRecord> recs;
    for (const Camera& c : orbit_cameras(mannequin_orbit(3))) recs.push_back({c, "img.png", std::nullopt});
    recs[1].mask = "mask.png";
    save_cameras(recs, dir / "cameras.json");
    const auto back = load_cameras(dir / "cameras.json");
    ASSERT_EQ(back.size(), 3u);
    EXPECT_TRUE(back[2].camera.rotation.isApprox(recs[2].camera.rotation, 1e-12));
    EXPECT_TRUE(back[2].camera.translation.isApprox(recs[2].camera.translation, 1e-12));
    EXPECT_EQ(back[0].camera.width, 64);
    EXPECT_FALSE(back[0].mask.has_value());
    ASSERT_TRUE(back[1].mask.has_value());
    EXPECT_EQ(std::filesystem::path(*back[1].mask).filename(), "mask.png");
}

TEST(Camera, RejectsNonOrthonormalRotation) {
    Camera cam = front_camera(16, 16, 16);
    EXPECT_NO_THROW(cam.validate());
    cam.rotation(0, 0) = 1.01;
    EXPECT_THROW(cam.validate(), InvalidArgumentError);
    Camera bad = front_camera(16, 16, 16);
    bad.cx = 16.0;
    EXPECT_THROW(bad.validate(), InvalidArgumentError);
}
