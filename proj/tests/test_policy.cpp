#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>

#include "pnav/eval_metrics.hpp"
#include "pnav/policy.hpp"

namespace {

using namespace pnav;

PoseState offset_azimuth(PoseState s, double off) {
    s.theta = EulerPose(wrap_angle(s.theta.azimuth + off), s.theta.elevation, s.theta.inplane);
    return s;
}

/// Small action that keeps a mid-range state away from every clamp.
Action small_action(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    std::array<double, kActionDim> v{};
    for (double& x : v) x = u(rng);
    return Action::from_vector(v);
}

PoseState mid_state(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    auto v = mean_pose().to_vector();
    v[0] = u(rng);
    v[1] = 0.3 + 0.2 * u(rng);
    v[2] = 0.2 * u(rng);
    v[3] = 0.1 * u(rng);
    v[4] = 0.1 * u(rng);
    v[5] = 0.2 * u(rng);
    for (std::size_t i = 6; i < kStateDim; ++i) v[i] = u(rng);
    return PoseState::from_vector(v);
}

void expect_state_near(const PoseState& a, const PoseState& b, double tol) {
    const auto x = a.to_vector(), y = b.to_vector();
    for (std::size_t i = 0; i < kStateDim; ++i) EXPECT_NEAR(x[i], y[i], tol) << "component " << i;
}

TEST(ApplyAction, ZeroInverseAndWrap) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        const PoseState s = mid_state(rng);
        EXPECT_EQ(apply_action(s, Action{}), s);
        const Action a = small_action(rng);
        expect_state_near(apply_action(apply_action(s, a), -a), s, 1e-12);
    }
    PoseState s = mean_pose();
    const double eps = 0.01;
    s.theta = EulerPose(kPi - eps, 0.0, 0.0);
    Action a;
    a.dtheta[0] = 2 * eps;
    EXPECT_NEAR(apply_action(s, a).theta.azimuth, -kPi + eps, 1e-12);
}

TEST(ApplyAction, AssociativeWithoutClamp) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 50; ++i) {
        const PoseState s = mid_state(rng);
        const Action a = small_action(rng), b = small_action(rng);
        expect_state_near(apply_action(apply_action(s, a), b), apply_action(s, a + b), 1e-12);
    }
}

TEST(ApplyAction, ClampsTranslationAndLatent) {
    Action a;
    a.dt[0] = 10.0;
    a.dz[3] = -10.0;
    const PoseState s = apply_action(mean_pose(), a);
    EXPECT_EQ(s.t.tx, 0.5);
    EXPECT_EQ(s.z[3], -3.0);
}

TEST(ClampAction, RespectsBounds) {
    std::array<double, kActionDim> v{};
    v.fill(100.0);
    const auto c = clamp_action(Action::from_vector(v)).to_vector();
    for (std::size_t i = 0; i < kActionDim; ++i) EXPECT_EQ(c[i], action_bounds()[i]);
    EXPECT_EQ(action_bounds()[0], kPi);
    EXPECT_EQ(action_bounds()[3], 0.5);
    EXPECT_EQ(action_bounds()[6], 2.0);
}

TEST(EncodeObservation, ShapeDifferenceAndOrder) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(3);
    const Image a = render(spec, sample_state(rng)), b = render(spec, sample_state(rng));
    const Features same = encode_observation(a, a);
    ASSERT_EQ(same.size(), kFeatureDim);
    ASSERT_EQ(kFeatureDim, 768u);
    for (std::size_t i = 512; i < 768; ++i) EXPECT_EQ(same[i], 0.0f);
    EXPECT_NE(encode_observation(a, b), encode_observation(b, a));
    EXPECT_THROW(encode_observation(a, Image(32, 32)), ad::ShapeError);
}

TEST(EncodeObservation, PooledGrayOracle) {
    Image img(64, 64);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 64; ++x) img.at(c, y, x) = static_cast<double>(c + (x / 4) + 16 * (y / 4)) / 300.0;
    const Features f = encode_observation(img, Image(64, 64));
    // Block (by, bx) is constant per channel; the gray mean of c + k over c = 0..2 is k + 1.
    for (std::size_t by = 0; by < 16; ++by)
        for (std::size_t bx = 0; bx < 16; ++bx)
            EXPECT_NEAR(f[by * 16 + bx], static_cast<double>(bx + 16 * by + 1) / 300.0, 1e-6);
}

TEST(Rollout, ZeroPolicyAndShapes) {
    const auto spec = make_generator("car");
    const GeneratorSpec before = spec;
    std::mt19937_64 rng(4);
    const PoseState s0 = sample_state(rng);
    const Image target = render(spec, sample_state(rng));
    ZeroPolicy zero;
    const auto one = rollout(zero, spec, s0, target, {1, false});
    EXPECT_EQ(one.final_state(), s0);
    const auto tr = rollout(zero, spec, s0, target, {5, true});
    EXPECT_EQ(tr.states.size(), 6u);
    EXPECT_EQ(tr.actions.size(), 5u);
    EXPECT_EQ(tr.images.size(), 6u);
    EXPECT_EQ(tr.losses.size(), 6u);
    EXPECT_EQ(spec, before);
    EXPECT_THROW(rollout(zero, spec, s0, target, {-1, false}), std::invalid_argument);
}

TEST(GdPolicy, StationaryAtGeneratingState) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(5);
    for (int i = 0; i < 5; ++i) {
        const PoseState s = sample_state(rng);
        GdPolicy gd;
        const Action a = gd.act(spec, s, Image(), render(spec, s));
        EXPECT_LT(gd.last_grad_norm(), 1e-6);
        for (double v : a.to_vector()) EXPECT_LT(std::abs(v), 1e-6);
    }
}

TEST(GdPolicy, DeterministicRollout) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(6);
    const PoseState goal = sample_state(rng);
    const PoseState s0 = offset_azimuth(goal, 0.5);
    const auto a = gd_rollout(spec, s0, render(spec, goal), {}, true);
    const auto b = gd_rollout(spec, s0, render(spec, goal), {}, true);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(a.losses, b.losses);
}

TEST(GdPolicy, ConvergesFromTenDegrees) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(7);
    int ok = 0, reduced = 0;
    for (int i = 0; i < 50; ++i) {
        const PoseState goal = sample_state(rng);
        const auto tr = gd_rollout(spec, offset_azimuth(goal, rad(10.0)), render(spec, goal), {}, true);
        if (deg(episode_error(tr.final_state(), goal).rotation) < 5.0) ++ok;
        reduced += tr.losses.back() < 0.1 * tr.losses.front();
    }
    EXPECT_GE(ok, 40);
    EXPECT_GE(reduced, 40);
}

TEST(GdPolicy, TrappedAtHalfTurnOnSymmetricTexture) {
    const auto spec = make_generator("box");
    std::mt19937_64 rng(8);
    int stuck = 0;
    for (int i = 0; i < 50; ++i) {
        const PoseState goal = sample_state(rng);
        const auto tr = gd_rollout(spec, offset_azimuth(goal, kPi), render(spec, goal), {});
        if (deg(episode_error(tr.final_state(), goal).rotation) > 30.0) ++stuck;
    }
    EXPECT_GE(stuck, 30);
}

TEST(MultiStartGd, SingleStartIsPlainGd) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(9);
    const PoseState goal = sample_state(rng);
    const Image target = render(spec, goal);
    const auto ms = multi_start_gd(spec, target, 1, {});
    EXPECT_EQ(ms.best, gd_rollout(spec, mean_pose(), target, {}).final_state());
    EXPECT_THROW(multi_start_gd(spec, target, 0, {}), std::invalid_argument);
}

TEST(MultiStartGd, SixteenStartsBeatOneAtHalfTurn) {
    const auto spec = make_generator("car");
    std::mt19937_64 rng(10);
    int one = 0, sixteen = 0;
    for (int i = 0; i < 20; ++i) {
        const PoseState goal = sample_state(rng);
        const PoseState s0 = offset_azimuth(goal, kPi);
        const Image target = render(spec, goal);
        one += deg(episode_error(gd_rollout(spec, s0, target, {}).final_state(), goal).rotation) < 30.0;
        sixteen += deg(episode_error(multi_start_gd(spec, target, 16, {}, s0).best, goal).rotation) < 30.0;
    }
    EXPECT_GT(sixteen, one);
}

TEST(MultiStartGd, CostGrowsLinearly) {
    const auto spec = make_generator("car");
    const Image target = render(spec, offset_azimuth(mean_pose(), 1.0));
    GdConfig cfg;
    cfg.steps = 10;
    auto time = [&](std::size_t n) {
        const auto t0 = std::chrono::steady_clock::now();
        multi_start_gd(spec, target, n, cfg);
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    time(1);
    const double t1 = std::min(time(1), time(1)), t8 = time(8);
    EXPECT_GT(t8 / t1, 8.0 * 0.7);
    EXPECT_LT(t8 / t1, 8.0 * 1.3);
}

TEST(PolicyNet, ShapesClampAndRoundTrip) {
    PolicyNet net(32, 11);
    EXPECT_EQ(net.hidden(), 32u);
    std::mt19937_64 rng(12);
    Features f(kFeatureDim);
    std::normal_distribution<float> n(0, 50);
    for (float& v : f) v = n(rng);
    const auto h = net.heads(net.normalized_batch(f));
    EXPECT_EQ(h.mean_raw.shape(), (ad::Shape{1, kActionDim}));
    for (double v : h.log_std.data()) {
        EXPECT_GE(v, PolicyNet::kLogStdMin);
        EXPECT_LE(v, PolicyNet::kLogStdMax);
    }
    const auto a = net.mean_action(f).to_vector();
    for (std::size_t i = 0; i < kActionDim; ++i) EXPECT_LE(std::abs(a[i]), action_bounds()[i]);

    const auto path = std::filesystem::temp_directory_path() / "pnav_policy_roundtrip.pnw";
    net.save(path);
    const PolicyNet back = PolicyNet::load(path);
    EXPECT_TRUE(back == net);
    EXPECT_EQ(back.mean_action(f), net.mean_action(f));
    std::filesystem::remove(path);
}

TEST(PolicyNet, NormalizerStandardizes) {
    PolicyNet net(8, 13);
    std::mt19937_64 rng(14);
    std::normal_distribution<float> n(3.0f, 2.0f);
    std::vector<Features> rows(200, Features(kFeatureDim));
    for (auto& r : rows)
        for (float& v : r) v = n(rng);
    net.fit_normalizer(rows);
    for (std::size_t j : {std::size_t{0}, std::size_t{400}, kFeatureDim - 1}) {
        double mean = 0.0, ss = 0.0;
        for (const auto& r : rows) mean += r[j];
        mean /= 200.0;
        for (const auto& r : rows) ss += (r[j] - mean) * (r[j] - mean);
        const double sd = std::sqrt(ss / 200.0);
        const ad::Array x = net.normalized_batch(rows[0]);
        EXPECT_NEAR(x[j], (rows[0][j] - mean) / (sd + 1e-3), 1e-9);
    }
    EXPECT_THROW(net.fit_normalizer({}), std::invalid_argument);
}

TEST(PolicyNet, RejectsMalformedWeights) {
    PolicyNet net(8, 15);
    auto params = net.all_params();
    params.pop_back();
    EXPECT_THROW(PolicyNet::from_params(params), ad::FormatError);
    params = net.all_params();
    params[2].name = "other";
    EXPECT_THROW(PolicyNet::from_params(params), ad::FormatError);
}

TEST(StartMode, ParseAndSample) {
    for (auto m : {StartMode::random, StartMode::mean_pose, StartMode::azimuth_offset, StartMode::mixed})
        EXPECT_EQ(parse_start_mode(to_string(m)), m);
    EXPECT_THROW(parse_start_mode("nowhere"), std::invalid_argument);
    std::mt19937_64 rng(16);
    const PoseState goal = sample_state(rng);
    EXPECT_EQ(sample_start(rng, goal, StartMode::mean_pose), mean_pose());
    const PoseState off = sample_start(rng, goal, StartMode::azimuth_offset);
    EXPECT_EQ(off.t, goal.t);
    EXPECT_EQ(off.theta.elevation, goal.theta.elevation);
    EXPECT_EQ(off.z, LatentCode());
}

}  // namespace
