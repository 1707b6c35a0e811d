#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "pnav/config.hpp"
#include "pnav/csv.hpp"
#include "pnav/eval.hpp"
#include "pnav/state_text.hpp"

namespace {

using namespace pnav;

GdConfig quick_gd(int steps) {
    GdConfig g;
    g.steps = steps;
    return g;
}

Image random_image(std::mt19937_64& rng) {
    Image img(64, 64);
    std::uniform_real_distribution<double> u(0, 1);
    for (double& v : img.values) v = u(rng);
    return img;
}

// ---------------------------------------------------------------------------
// Metrics

TEST(ComputeAp, Examples) {
    EXPECT_EQ(compute_ap(std::vector<double>{0, 0, 0}, 1e-9), 1.0);
    EXPECT_DOUBLE_EQ(compute_ap(std::vector<double>{5, 15, 45}, 30), 2.0 / 3.0);
    EXPECT_EQ(compute_ap(std::vector<double>{30}, 30), 0.0);  // strictly below
    EXPECT_THROW(compute_ap(std::vector<double>{}, 30), std::invalid_argument);
    EXPECT_THROW(compute_ap(std::vector<double>{1}, 0), std::invalid_argument);
}

TEST(ComputeAp, MonotoneInThreshold) {
    std::mt19937_64 rng(1);
    std::exponential_distribution<double> e(0.05);
    for (int n = 0; n < 20; ++n) {
        std::vector<double> errs(37);
        for (double& v : errs) v = e(rng);
        double prev = 0.0;
        for (double t = 1; t < 200; t += 3) {
            const double ap = compute_ap(errs, t);
            EXPECT_GE(ap, prev);
            EXPECT_LE(ap, 1.0);
            prev = ap;
        }
        EXPECT_EQ(compute_ap(errs, 1e300), 1.0);
    }
}

TEST(Stats, MedianAndStddev) {
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
    EXPECT_THROW(median({}), std::invalid_argument);
    const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
    EXPECT_NEAR(stddev(v), std::sqrt(32.0 / 7.0), 1e-12);
    EXPECT_EQ(stddev(std::vector<double>{1.0}), 0.0);
}

TEST(EpisodeError, ZeroSymmetryAndOracle) {
    std::mt19937_64 rng(2);
    const PoseState g = sample_state(rng);
    const auto e0 = episode_error(g, g);
    EXPECT_NEAR(e0.rotation, 0.0, 1e-7);
    EXPECT_EQ(e0.translation, 0.0);

    const Vec3 y{0, 1, 0};
    PoseState spun = g;
    // Azimuth is a spin about the object's y axis.
    spun.theta = EulerPose(wrap_angle(g.theta.azimuth + 1.1), g.theta.elevation, g.theta.inplane);
    EXPECT_NEAR(episode_error(spun, g, y).rotation, 0.0, 1e-7);
    EXPECT_GT(episode_error(spun, g).rotation, 0.5);

    for (int i = 0; i < 20; ++i) {
        const PoseState a = sample_state(rng), b = sample_state(rng);
        const auto e = episode_error(a, b);
        // Oracle: angle of the relative quaternion.
        const Quaternion qa = euler_to_quaternion(a.theta), qb = euler_to_quaternion(b.theta);
        const double dot = std::abs(qa.w * qb.w + qa.x * qb.x + qa.y * qb.y + qa.z * qb.z);
        EXPECT_NEAR(e.rotation, 2.0 * std::acos(std::min(1.0, dot)), 1e-6);
        EXPECT_NEAR(e.translation, std::hypot(a.t.tx - b.t.tx, a.t.ty - b.t.ty, a.t.scale - b.t.scale), 1e-12);
    }
}

TEST(Thresholds, Validation) {
    Thresholds t;
    EXPECT_NO_THROW(t.validate());
    t.rotation_deg = {10, 10};
    EXPECT_THROW(t.validate(), std::invalid_argument);
    t.rotation_deg = {-1};
    EXPECT_THROW(t.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Disturbances

TEST(Disturbance, IdentityCases) {
    std::mt19937_64 rng(3);
    const Image img = random_image(rng);
    EXPECT_EQ(apply_disturbance(img, {Disturbance::Kind::brightness, 1.0}, rng), img);
    EXPECT_EQ(apply_disturbance(img, {Disturbance::Kind::occlusion, 0.0}, rng), img);
    EXPECT_EQ(apply_disturbance(img, {Disturbance::Kind::shift, 0.0}, rng), img);
    Image s = img;
    for (int i = 0; i < 4; ++i) s = apply_disturbance(s, {Disturbance::Kind::shift, 0.25}, rng);
    EXPECT_EQ(s, img);
}

TEST(Disturbance, BrightnessClampsAndShiftMoves) {
    std::mt19937_64 rng(4);
    const Image img = random_image(rng);
    const Image b = apply_disturbance(img, {Disturbance::Kind::brightness, 1.5}, rng);
    for (std::size_t i = 0; i < img.values.size(); ++i) EXPECT_EQ(b.values[i], std::min(1.0, img.values[i] * 1.5));
    const Image s = apply_disturbance(img, {Disturbance::Kind::shift, 0.1}, rng);  // round(6.4) = 6 pixels
    EXPECT_EQ(s.at(1, 10, 20), img.at(1, 4, 14));
    EXPECT_EQ(s.at(2, 2, 3), img.at(2, 60, 61));
}

TEST(Disturbance, OcclusionAreaAndDeterminism) {
    std::mt19937_64 rng(5);
    Image img(64, 64);
    for (double& v : img.values) v = 0.7;
    std::mt19937_64 r1(9), r2(9);
    const Disturbance d{Disturbance::Kind::occlusion, 0.2};
    const Image a = apply_disturbance(img, d, r1, 0.05), b = apply_disturbance(img, d, r2, 0.05);
    EXPECT_EQ(a, b);
    std::size_t filled = 0;
    for (double v : a.values) filled += v == 0.05;
    const std::size_t side = 29;  // round(sqrt(0.2 * 4096)) = round(28.6)
    EXPECT_EQ(filled, 3 * side * side);
}

TEST(Disturbance, ParseLabelAndValidate) {
    const auto d = Disturbance::parse("occlusion=0.3");
    EXPECT_EQ(d.kind, Disturbance::Kind::occlusion);
    EXPECT_EQ(d.magnitude, 0.3);
    EXPECT_EQ(d.label(), "occlusion=0.3");
    EXPECT_THROW(Disturbance::parse("occlusion=0.6"), std::invalid_argument);
    EXPECT_THROW(Disturbance::parse("blur=1"), std::invalid_argument);
    EXPECT_THROW(Disturbance::parse("shift=x"), std::invalid_argument);
    EXPECT_THROW(Disturbance::parse("brightness=0"), std::invalid_argument);
    EXPECT_EQ(default_disturbance_grid().size(), 8u);
}

// ---------------------------------------------------------------------------
// Protocols

TEST(Episodes, OffsetEpisodesShareGoals) {
    const auto a = offset_episodes(10, 5, 7), b = offset_episodes(170, 5, 7);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(a[i].goal, b[i].goal);
        EXPECT_EQ(a[i].start.t, a[i].goal.t);
        EXPECT_EQ(a[i].start.z, LatentCode());
        EXPECT_NEAR(std::abs(wrap_angle(a[i].start.theta.azimuth - a[i].goal.theta.azimuth)), rad(10), 1e-12);
    }
    for (const auto& e : heldout_episodes(4, 8)) EXPECT_EQ(e.start, mean_pose());
}

/// Takes the exact residual in one step.
class OraclePolicy final : public Policy {
public:
    explicit OraclePolicy(PoseState goal) : goal_(goal) {}
    [[nodiscard]] bool wants_image() const override { return false; }
    Action act(const GeneratorSpec&, const PoseState& s, const Image&, const Image&) override {
        return residual_action(goal_, s);
    }

private:
    PoseState goal_;
};

TEST(InitSweep, OracleIsPerfectAndBinsAreComplete) {
    const auto spec = make_generator("car");
    const auto angles = default_sweep_angles();
    ASSERT_EQ(angles.size(), 18u);
    EXPECT_EQ(angles.front(), 10.0);
    EXPECT_EQ(angles.back(), 180.0);
    for (double a : angles) {
        std::vector<double> errs;
        for (const auto& e : offset_episodes(a, 10, 11)) {
            OraclePolicy p(e.goal);
            errs.push_back(deg(episode_error(rollout(p, spec, e.start, Image(), {1, false}).final_state(), e.goal).rotation));
        }
        EXPECT_EQ(compute_ap(errs, 30), 1.0) << a;
    }
    const auto bins = init_sweep(make_runner(PolicyKind::gd, nullptr, quick_gd(1)), spec, angles, 1, 12);
    const auto rows = sweep_rows(bins);
    EXPECT_EQ(rows.size(), 18u * 3);
    std::size_t at30 = 0;
    for (const auto& r : rows) at30 += r.metric == "rotation_ap@30";
    EXPECT_EQ(at30, 18u);
    EXPECT_EQ(rows.front().condition, "azimuth_offset=10");
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
    const auto spec = make_generator("car");
    const auto eps = heldout_episodes(6, 13);
    const auto runner = make_runner(PolicyKind::gd, nullptr, quick_gd(2));
    const auto a = evaluate(runner, spec, eps, 13, 1), b = evaluate(runner, spec, eps, 13, 3);
    for (std::size_t i = 0; i < eps.size(); ++i) {
        EXPECT_EQ(a.episodes[i].rotation, b.episodes[i].rotation);
        EXPECT_EQ(a.episodes[i].translation, b.episodes[i].translation);
    }
}

TEST(RobustnessSuite, ZeroMagnitudeMatchesClean) {
    const auto spec = make_generator("car");
    const std::vector<Disturbance> grid{{Disturbance::Kind::occlusion, 0.0}, {Disturbance::Kind::brightness, 1.0}};
    const auto rows = robustness_suite({make_runner(PolicyKind::gd, nullptr, quick_gd(2))}, spec, grid, 4, 14);
    const std::size_t per = 3 + 3 + 1;
    ASSERT_EQ(rows.size(), 3 * per);
    for (std::size_t i = 0; i < per; ++i) {
        EXPECT_EQ(rows[i].condition, "clean");
        EXPECT_EQ(rows[per + i].value, rows[i].value);
        EXPECT_EQ(rows[2 * per + i].value, rows[i].value);
    }
    EXPECT_EQ(rows[per].condition, "occlusion=0");
}

TEST(RobustnessSuite, DisturbanceOnlyTouchesTarget) {
    // Zero GD steps never look at the target, so a disturbed target changes nothing.
    const auto spec = make_generator("car");
    const auto eps = heldout_episodes(3, 15);
    const auto runner = make_runner(PolicyKind::gd, nullptr, quick_gd(0));
    const auto clean = evaluate(runner, spec, eps, 15);
    const auto dist = evaluate(runner, spec, eps, 15, 1, Disturbance{Disturbance::Kind::occlusion, 0.3});
    for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_EQ(clean.episodes[i].rotation, dist.episodes[i].rotation);
}

TEST(TimingSuite, RowsForEveryPolicyAndNesting) {
    const auto spec = make_generator("car");
    EXPECT_THROW(timing_suite({}, spec, 9, 1), std::invalid_argument);
    const auto t = timing_suite({make_runner(PolicyKind::gd, nullptr, quick_gd(2)), make_runner(PolicyKind::gd16, nullptr, quick_gd(2))},
                                spec, 10, 16);
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t[0].policy, "gd");
    EXPECT_EQ(t[1].policy, "gd16");
    EXPECT_EQ(t[0].images, 10u);
    EXPECT_GT(t[1].mean_seconds, t[0].mean_seconds);
    const auto rows = timing_rows(t);
    EXPECT_EQ(rows[1].metric, "mean_seconds");
    EXPECT_EQ(rows[1].condition, "timing");
}

TEST(PolicyKinds, ParseAndModelRequirement) {
    for (auto k : {PolicyKind::gd, PolicyKind::gd16, PolicyKind::gd32, PolicyKind::rl, PolicyKind::bc, PolicyKind::dagger,
                   PolicyKind::rl_gd, PolicyKind::dagger_gd})
        EXPECT_EQ(parse_policy_kind(to_string(k)), k);
    EXPECT_EQ(parse_policy_kind("dagger+gd"), PolicyKind::dagger_gd);
    EXPECT_THROW(parse_policy_kind("ppo"), std::invalid_argument);
    EXPECT_THROW(make_runner(PolicyKind::bc), std::invalid_argument);
    EXPECT_EQ(make_runner(PolicyKind::bc, std::make_shared<const PolicyNet>(PolicyNet(8, 1))).learned_steps, 1);
    EXPECT_EQ(make_runner(PolicyKind::dagger, std::make_shared<const PolicyNet>(PolicyNet(8, 1))).learned_steps, 10);
}

TEST(Landscape, TargetCellIsMinimumAndGridSize) {
    const auto spec = make_generator("box");
    const Landscape l = loss_landscape(spec, mean_pose(), 36, 5, 30.0);
    ASSERT_EQ(l.loss.size(), 36u * 5);
    const std::size_t target = 2 * 36;
    EXPECT_EQ(l.loss[target], 0.0);
    for (double v : l.loss) EXPECT_GE(v, l.loss[target]);
    const auto row = l.center_row();
    bool near_half_turn = false;
    for (std::size_t i : cyclic_local_minima(row)) near_half_turn |= std::abs(10.0 * static_cast<double>(i) - 180.0) <= 20.0;
    EXPECT_TRUE(near_half_turn);
    EXPECT_THROW(loss_landscape(spec, mean_pose(), 36, 4, 30.0), std::invalid_argument);
}

TEST(Landscape, CyclicLocalMinima) {
    EXPECT_EQ(cyclic_local_minima({3, 1, 2, 0, 4}), (std::vector<std::size_t>{1, 3}));
    EXPECT_EQ(cyclic_local_minima({0, 1, 2, 1}), (std::vector<std::size_t>{0}));
    EXPECT_TRUE(cyclic_local_minima({1, 1, 1}).empty());
}

// ---------------------------------------------------------------------------
// Reports and CSV

TEST(Csv, QuotingAndNumbers) {
    EXPECT_EQ(csv::escape("plain"), "plain");
    EXPECT_EQ(csv::escape("a,b"), "\"a,b\"");
    EXPECT_EQ(csv::escape("say \"hi\""), "\"say \"\"hi\"\"\"");
    EXPECT_EQ(csv::escape("two\nlines"), "\"two\nlines\"");
    std::ostringstream os;
    csv::write_row(os, {"x", "y,z"});
    EXPECT_EQ(os.str(), "x,\"y,z\"\r\n");
    EXPECT_EQ(csv::number(0.1), "0.1");
    EXPECT_EQ(std::stod(csv::number(1.0 / 3.0)), 1.0 / 3.0);
    EXPECT_EQ(csv::number(std::size_t{42}), "42");
}

TEST(Report, RowsAggregateAndWrite) {
    EvalReport rep;
    rep.policy = "gd";
    for (double e : {5.0, 20.0, 50.0, 90.0}) rep.episodes.push_back({rad(e), 0.07, 0.0});
    const auto rows = report_rows(rep, "clean");
    ASSERT_EQ(rows.size(), 7u);
    EXPECT_EQ(rows[0].metric, "rotation_ap@10");
    EXPECT_EQ(rows[0].value, 0.25);
    EXPECT_EQ(rows[2].value, 0.75);
    EXPECT_EQ(rows[3].metric, "translation_ap@0.05");
    EXPECT_EQ(rows[3].value, 0.0);
    EXPECT_EQ(rows[4].value, 1.0);
    EXPECT_EQ(rows[6].metric, "rotation_median_deg");
    EXPECT_NEAR(rows[6].value, 35.0, 1e-12);

    auto other = rows;
    for (auto& r : other) r.value += 1.0;
    auto third = rows;
    for (auto& r : third) r.value += 3.0;
    const auto agg = aggregate_seeds({rows, other, third});
    EXPECT_EQ(agg[0].value, rows[0].value + 1.0);
    EXPECT_EQ(agg[0].seed_count, 3u);
    EXPECT_NEAR(agg[0].stddev, std::sqrt(7.0 / 3.0), 1e-12);
    auto broken = rows;
    broken.pop_back();
    EXPECT_THROW(aggregate_seeds({rows, broken}), std::invalid_argument);

    std::ostringstream os;
    write_report(os, {rows[0]});
    EXPECT_EQ(os.str(), "policy,condition,metric,value,seed_count,stddev\r\ngd,clean,rotation_ap@10,0.25,1,0\r\n");
}

// ---------------------------------------------------------------------------
// Config and state text

TEST(Config, DefaultsRoundTripThroughIni) {
    const RunConfig d = parse_config("");
    EXPECT_EQ(d.category, "car");
    EXPECT_EQ(d.weights.lambda1, 10.0);
    EXPECT_EQ(d.il.weights.lambda2, 5.0);
    EXPECT_EQ(d.gd.lr, 0.02);
    EXPECT_EQ(d.rl.gamma, 0.9);
    EXPECT_EQ(d.il.demos, 50000u);
    EXPECT_EQ(to_ini(parse_config(to_ini(d, true))), to_ini(d));

    const RunConfig c = parse_config("[run]\ncategory = box\nseed = 99\n\n# note\n[il]\ndemos = 10\nstart = mean_pose\n[loss]\nlambda3 = 0.5\n");
    EXPECT_EQ(c.category, "box");
    EXPECT_EQ(c.seed, 99u);
    EXPECT_EQ(c.il.demos, 10u);
    EXPECT_EQ(c.il.start, StartMode::mean_pose);
    EXPECT_EQ(c.il.weights.lambda3, 0.5);
    EXPECT_EQ(c.rl.weights.lambda3, 0.5);
    EXPECT_EQ(to_ini(parse_config(to_ini(c))), to_ini(c));
}

TEST(Config, RejectsUnknownAndInvalid) {
    auto message = [](const std::string& text) {
        try {
            parse_config(text, "t.ini");
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message("[il]\nepoch = 3\n").find("t.ini:2:"), std::string::npos);
    EXPECT_NE(message("[il]\nepoch = 3\n").find("unknown key"), std::string::npos);
    EXPECT_NE(message("[nope]\n").find("unknown section"), std::string::npos);
    EXPECT_NE(message("seed = 1\n").find("outside"), std::string::npos);
    EXPECT_NE(message("[run]\nseed = -1\n").find("t.ini:2:"), std::string::npos);
    EXPECT_NE(message("[gd]\nlr = abc\n"), "no error");
    EXPECT_NE(message("[gd]\nlr = inf\n"), "no error");
    EXPECT_NE(message("[run]\ncategory = teapot\n"), "no error");
    EXPECT_NE(message("[rl]\ntau = 0\n"), "no error");
    EXPECT_NE(message("[eval]\ntiming_images = 5\n"), "no error");
    EXPECT_NE(message("[run]\npolicy = ppo\n"), "no error");
    EXPECT_NE(message("[il]\nuse_latent_loss = maybe\n"), "no error");
    try {
        load_config("/nonexistent/dir/cfg.ini");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/cfg.ini"), std::string::npos);
    }
}

TEST(Config, EveryFieldDocumented) {
    for (const auto& f : config_schema()) EXPECT_FALSE(f.doc.empty()) << f.section << "." << f.key;
}

TEST(StateText, ParseFormatRoundTrip) {
    EXPECT_EQ(parse_state("mean"), mean_pose());
    const PoseState s = parse_state("az=30,el=10,ip=-5,tx=0.1,ty=-0.05,scale=0.2,z3=1.5");
    EXPECT_NEAR(s.theta.azimuth, rad(30), 1e-15);
    EXPECT_NEAR(s.theta.inplane, rad(-5), 1e-15);
    EXPECT_EQ(s.t.ty, -0.05);
    EXPECT_EQ(s.z[3], 1.5);
    const PoseState back = parse_state(format_state(s));
    const auto a = s.to_vector(), b = back.to_vector();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
    EXPECT_THROW(parse_state("az=3x"), StateParseError);
    EXPECT_THROW(parse_state("az"), StateParseError);
    EXPECT_THROW(parse_state("yaw=3"), StateParseError);
    EXPECT_THROW(parse_state("z16=1"), StateParseError);
}

}  // namespace
