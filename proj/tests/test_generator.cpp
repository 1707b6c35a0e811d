#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pnav/autodiff.hpp"
#include "pnav/generator.hpp"

namespace {

using namespace pnav;

double mean_pixel(const Image& img) {
    double s = 0.0;
    for (double v : img.values) s += v;
    return s / static_cast<double>(img.values.size());
}

PoseState with_azimuth(PoseState s, double az) {
    s.theta = EulerPose(az, s.theta.elevation, s.theta.inplane);
    return s;
}

// Independent oracle for the pyramid part of the loss.
std::vector<double> pool(const std::vector<double>& x, std::size_t h, std::size_t w) {
    std::vector<double> out(3 * (h / 2) * (w / 2));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t x0 = 0; x0 < w / 2; ++x0) {
                const auto at = [&](std::size_t yy, std::size_t xx) { return x[(c * h + yy) * w + xx]; };
                out[(c * (h / 2) + y) * (w / 2) + x0] =
                    0.25 * (at(2 * y, 2 * x0) + at(2 * y, 2 * x0 + 1) + at(2 * y + 1, 2 * x0) + at(2 * y + 1, 2 * x0 + 1));
            }
    return out;
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

TEST(Render, DeterministicAndInRange) {
    const auto spec = make_generator("car");
    const Image a = render(spec, mean_pose());
    const Image b = render(spec, mean_pose());
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.width, 64u);
    EXPECT_EQ(a.values.size(), 3u * 64 * 64);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
        const Image img = render(spec, sample_state(rng));
        for (double v : img.values) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
    }
}

TEST(Render, AzimuthFullTurnIsIdentical) {
    const auto spec = make_generator("box");
    std::mt19937_64 rng(5);
    for (int i = 0; i < 5; ++i) {
        const PoseState s = sample_state(rng);
        // Wrapping az + 2pi can move the angle by an ulp, so compare to rounding level.
        const Image a = render(spec, s), b = render(spec, with_azimuth(s, s.theta.azimuth + 2 * kPi));
        double dev = 0.0;
        for (std::size_t k = 0; k < a.values.size(); ++k) dev = std::max(dev, std::abs(a.values[k] - b.values[k]));
        EXPECT_LT(dev, 1e-12);
    }
}

TEST(Render, TapeAndPlainAgree) {
    const auto spec = make_generator("bottle");
    std::mt19937_64 rng(11);
    const PoseState s = sample_state(rng);
    ad::Tape t;
    const auto img = render(t, spec, t.constant(state_array(s)));
    EXPECT_EQ(img.value().storage(), render(spec, s).values);
}

TEST(Render, UnknownCategoryThrows) { EXPECT_THROW(make_generator("teapot"), UnknownCategory); }

TEST(Render, MeanPixelAzimuthGradientMatchesFiniteDifference) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(17);
    for (int i = 0; i < 5; ++i) {
        const PoseState s = sample_state(rng);
        ad::Tape t;
        const auto x = t.param(state_array(s));
        const auto m = ad::mean(render(t, spec, x));
        const double g = t.backward(m)[x][0];
        const double h = 1e-5;
        auto v = s.to_vector();
        v[0] += h;
        const double up = mean_pixel(render(spec, PoseState::from_vector(v)));
        v[0] -= 2 * h;
        const double dn = mean_pixel(render(spec, PoseState::from_vector(v)));
        const double fd = (up - dn) / (2 * h);
        EXPECT_LE(std::abs(g - fd), 1e-3 * std::max(std::abs(fd), 1e-4)) << "state " << i;
    }
}

TEST(Render, LossGradientPassesGradCheckOnTwentyStates) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(23);
    const Image target = render(spec, sample_state(rng));
    const ad::TapeFunction f = [&](ad::Tape& t, const std::vector<ad::Var>& x) {
        return perceptual_loss(render(t, spec, x[0]), t.constant(target.to_array()));
    };
    for (int i = 0; i < 20; ++i) {
        const auto rep = ad::grad_check(f, {state_array(sample_state(rng))}, 1e-5, 1e-3);
        EXPECT_TRUE(rep.passed) << "state " << i << " max rel err " << rep.max_rel_error;
    }
}

TEST(Render, PoseSensitiveToAzimuth) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> off(kPi / 6, kPi);
    for (int i = 0; i < 100; ++i) {
        const PoseState s = sample_state(rng);
        const PoseState r = with_azimuth(s, s.theta.azimuth + off(rng));
        EXPECT_GT(perceptual_loss(render(spec, s), render(spec, r)), 0.0);
    }
}

TEST(Render, LatentSensitivity) {
    for (const char* cat : {"car", "box", "bottle"}) {
        const auto spec = make_generator(cat);
        const Image base = render(spec, mean_pose());
        int sensitive = 0;
        for (std::size_t j = 0; j < kLatentDim; ++j) {
            PoseState s = mean_pose();
            std::array<double, kLatentDim> z{};
            z[j] = 1.0;
            s.z = LatentCode(z);
            if (perceptual_loss(render(spec, s), base) > 0.0) ++sensitive;
        }
        EXPECT_GE(sensitive, 12) << cat;
    }
}

TEST(Render, SymmetricTextureLandscapeHasLocalMinimumNearHalfTurn) {
    const auto spec = make_generator("box");
    const PoseState goal = mean_pose();
    const Image target = render(spec, goal);
    std::vector<double> loss;
    for (int k = 0; k < 72; ++k) loss.push_back(perceptual_loss(render(spec, with_azimuth(goal, k * kPi / 36)), target));
    int found = -1;
    for (int k = 1; k < 72; ++k) {
        const double prev = loss[static_cast<std::size_t>(k - 1)], next = loss[static_cast<std::size_t>((k + 1) % 72)];
        if (loss[static_cast<std::size_t>(k)] < prev && loss[static_cast<std::size_t>(k)] < next && std::abs(k * 5 - 180) <= 20) found = k;
    }
    ASSERT_GE(found, 0);
    EXPECT_GT(loss[static_cast<std::size_t>(found)], loss[0]);  // not the global minimum
}

TEST(Render, LatentCodeClamps) {
    std::array<double, kLatentDim> z{};
    z[0] = 10.0;
    z[1] = -10.0;
    const LatentCode c(z);
    EXPECT_EQ(c[0], 3.0);
    EXPECT_EQ(c[1], -3.0);
}

TEST(PerceptualLoss, ZeroSymmetricAndMatchesOracle) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(31);
    const Image a = render(spec, sample_state(rng));
    const Image b = render(spec, sample_state(rng));
    EXPECT_EQ(perceptual_loss(a, a), 0.0);
    EXPECT_DOUBLE_EQ(perceptual_loss(a, b), perceptual_loss(b, a));

    // Pyramid part from the oracle; the feature term is non-negative.
    double pyramid = 0.0;
    std::vector<double> x = a.values, y = b.values;
    std::size_t h = 64, w = 64;
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        pyramid += mse(x, y);
        if (l + 1 < kPyramidLevels) {
            x = pool(x, h, w);
            y = pool(y, h, w);
            h /= 2;
            w /= 2;
        }
    }
    EXPECT_GE(perceptual_loss(a, b), pyramid - 1e-12);
    EXPECT_LE(perceptual_loss(a, b), pyramid * 4.0);
}

TEST(PerceptualLoss, DimensionMismatchThrows) {
    Image a(64, 64), b(32, 32);
    EXPECT_ANY_THROW(perceptual_loss(a, b));
}

TEST(SampleState, DeterministicAndInRange) {
    std::mt19937_64 r1(42), r2(42);
    EXPECT_EQ(sample_state(r1), sample_state(r2));
    std::mt19937_64 rng(1);
    double az_sum = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const PoseState s = sample_state(rng);
        az_sum += s.theta.azimuth;
        ASSERT_GT(s.theta.azimuth, -kPi - 1e-12);
        ASSERT_LE(s.theta.azimuth, kPi);
        ASSERT_GE(s.theta.elevation, -kPi / 6);
        ASSERT_LE(s.theta.elevation, kPi / 3);
        ASSERT_LE(std::abs(s.theta.inplane), kPi / 12);
        ASSERT_LE(std::abs(s.t.tx), 0.15);
        ASSERT_LE(std::abs(s.t.ty), 0.15);
        ASSERT_LE(std::abs(s.t.scale), 0.3);
        for (std::size_t j = 0; j < kLatentDim; ++j) ASSERT_LE(std::abs(s.z[j]), 3.0);
    }
    EXPECT_NEAR(az_sum / n, 0.0, 0.05);
}

TEST(MeanPose, Midpoints) {
    const PoseState m = mean_pose();
    EXPECT_EQ(m.theta.azimuth, 0.0);
    EXPECT_NEAR(m.theta.elevation, kPi / 12, 1e-15);
    EXPECT_EQ(m.theta.inplane, 0.0);
    EXPECT_EQ(m.t.tx, 0.0);
    EXPECT_EQ(m.t.scale, 0.0);
    for (std::size_t j = 0; j < kLatentDim; ++j) EXPECT_EQ(m.z[j], 0.0);
}

TEST(Ppm, HeaderSizeAndRounding) {
    Image img(2, 1);
    // 0.5 * 255 = 127.5 exactly, the only representable tie; it rounds to even 128.
    img.at(0, 0, 0) = 0.5;
    img.at(1, 0, 0) = 0.25;  // 63.75
    img.at(2, 0, 0) = 0.0;
    img.at(0, 0, 1) = 1.0;
    img.at(1, 0, 1) = 2.0;   // clamped
    img.at(2, 0, 1) = -1.0;  // clamped
    const std::string ppm = encode_ppm(img);
    const std::string header = "P6\n2 1\n255\n";
    ASSERT_EQ(ppm.substr(0, header.size()), header);
    ASSERT_EQ(ppm.size(), header.size() + 6);
    const auto* px = reinterpret_cast<const unsigned char*>(ppm.data() + header.size());
    EXPECT_EQ(px[0], 128);
    EXPECT_EQ(px[1], 64);
    EXPECT_EQ(px[2], 0);
    EXPECT_EQ(px[3], 255);
    EXPECT_EQ(px[4], 255);
    EXPECT_EQ(px[5], 0);
}

}  // namespace
