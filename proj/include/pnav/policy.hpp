#pragma once

// Navigation in the generator's input space: actions, the additive state
// transition, observations and their encoding, the gradient-descent policy,
// episode rollout, multi-start GD and the policy network used by RL and IL.

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pnav/autodiff.hpp"
#include "pnav/generator.hpp"
#include "pnav/geometry.hpp"
#include "pnav/nn.hpp"

namespace pnav {

inline constexpr std::size_t kActionDim = kStateDim;

/// Additive update of a PoseState; layout matches PoseState::to_vector.
struct Action {
    std::array<double, 3> dtheta{};
    std::array<double, 3> dt{};
    std::array<double, kLatentDim> dz{};

    [[nodiscard]] std::array<double, kActionDim> to_vector() const {
        std::array<double, kActionDim> v{};
        for (std::size_t i = 0; i < 3; ++i) {
            v[i] = dtheta[i];
            v[3 + i] = dt[i];
        }
        for (std::size_t i = 0; i < kLatentDim; ++i) v[6 + i] = dz[i];
        return v;
    }
    static Action from_vector(std::span<const double> v) {
        if (v.size() != kActionDim) throw ad::ShapeError("Action::from_vector: expected 22 values");
        Action a;
        for (std::size_t i = 0; i < 3; ++i) {
            a.dtheta[i] = v[i];
            a.dt[i] = v[3 + i];
        }
        for (std::size_t i = 0; i < kLatentDim; ++i) a.dz[i] = v[6 + i];
        return a;
    }
    friend Action operator+(const Action& a, const Action& b) {
        auto x = a.to_vector();
        const auto y = b.to_vector();
        for (std::size_t i = 0; i < kActionDim; ++i) x[i] += y[i];
        return from_vector(x);
    }
    friend Action operator-(const Action& a) {
        auto x = a.to_vector();
        for (double& v : x) v = -v;
        return from_vector(x);
    }
    friend bool operator==(const Action&, const Action&) = default;
};

/// Squashing bounds of learned policies: pi for angles, 0.5 for translation, 2 for latents.
inline const std::array<double, kActionDim>& action_bounds() {
    static const std::array<double, kActionDim> b = [] {
        std::array<double, kActionDim> v{};
        for (std::size_t i = 0; i < kActionDim; ++i) v[i] = i < 3 ? kPi : (i < 6 ? 0.5 : 2.0);
        return v;
    }();
    return b;
}

inline Action clamp_action(const Action& a) {
    auto v = a.to_vector();
    const auto& b = action_bounds();
    for (std::size_t i = 0; i < kActionDim; ++i) v[i] = std::clamp(v[i], -b[i], b[i]);
    return Action::from_vector(v);
}

/// s + a with angles re-wrapped and translation / latent re-clamped.
inline PoseState apply_action(const PoseState& s, const Action& a) {
    auto v = s.to_vector();
    const auto d = a.to_vector();
    for (std::size_t i = 0; i < kStateDim; ++i) v[i] += d[i];
    return PoseState::from_vector(v);
}

// ---------------------------------------------------------------------------
// Observations.

struct Observation {
    Image current;
    Image target;
};

inline constexpr std::size_t kPooledSide = 16;
/// Three gray 16x16 planes: current, target, current - target.
inline constexpr std::size_t kFeatureDim = 3 * kPooledSide * kPooledSide;
static_assert(kFeatureDim == 768);

using Features = std::vector<float>;

namespace detail {

inline std::array<double, kPooledSide * kPooledSide> pooled_gray(const Image& img) {
    if (img.width % kPooledSide || img.height % kPooledSide)
        throw ad::ShapeError("encode_observation: image size must be a multiple of 16");
    const std::size_t fx = img.width / kPooledSide, fy = img.height / kPooledSide;
    const double norm = 1.0 / (3.0 * static_cast<double>(fx * fy));
    std::array<double, kPooledSide * kPooledSide> out{};
    for (std::size_t by = 0; by < kPooledSide; ++by)
        for (std::size_t bx = 0; bx < kPooledSide; ++bx) {
            double s = 0.0;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = by * fy; y < (by + 1) * fy; ++y)
                    for (std::size_t x = bx * fx; x < (bx + 1) * fx; ++x) s += img.at(c, y, x);
            out[by * kPooledSide + bx] = s * norm;
        }
    return out;
}

}  // namespace detail

/// Gray conversion (mean of RGB), 16x16 average pooling, then [current, target, current - target].
inline Features encode_observation(const Image& current, const Image& target) {
    if (current.width != target.width || current.height != target.height)
        throw ad::ShapeError("encode_observation: current and target dimensions differ");
    const auto c = detail::pooled_gray(current);
    const auto t = detail::pooled_gray(target);
    constexpr std::size_t n = kPooledSide * kPooledSide;
    Features f(kFeatureDim);
    for (std::size_t i = 0; i < n; ++i) {
        f[i] = static_cast<float>(c[i]);
        f[n + i] = static_cast<float>(t[i]);
        f[2 * n + i] = static_cast<float>(c[i] - t[i]);
    }
    return f;
}

inline Features encode_observation(const Observation& o) { return encode_observation(o.current, o.target); }

/// Stacks feature vectors into a [rows, 768] network input.
inline ad::Array feature_batch(std::span<const Features* const> rows) {
    ad::Array x({rows.size(), kFeatureDim});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r]->size() != kFeatureDim) throw ad::ShapeError("feature_batch: wrong feature length");
        for (std::size_t j = 0; j < kFeatureDim; ++j) x[r * kFeatureDim + j] = (*rows[r])[j];
    }
    return x;
}

inline ad::Array feature_batch(const Features& f) {
    const Features* p = &f;
    return feature_batch(std::span<const Features* const>(&p, 1));
}

// ---------------------------------------------------------------------------
// Episodes.

struct EpisodeConfig {
    int steps = 10;
    bool record_trajectory = true;
};

struct Trajectory {
    std::vector<PoseState> states;  // T + 1
    std::vector<Action> actions;    // T
    std::vector<Image> images;      // T + 1 when recorded
    std::vector<double> losses;     // T + 1 when recorded: L_p(image, target)

    [[nodiscard]] const PoseState& final_state() const { return states.back(); }
    [[nodiscard]] std::size_t steps() const { return actions.size(); }
};

/// Maps the current state and observation to an action. Stateful policies
/// (GD's optimizer moments) are cleared by reset() at the start of an episode.
class Policy {
public:
    virtual ~Policy() = default;
    virtual void reset() {}
    /// Whether act() reads the rendered current image; when false rollout passes an empty Image.
    [[nodiscard]] virtual bool wants_image() const { return true; }
    virtual Action act(const GeneratorSpec& spec, const PoseState& s, const Image& current, const Image& target) = 0;
};

class ZeroPolicy final : public Policy {
public:
    [[nodiscard]] bool wants_image() const override { return false; }
    Action act(const GeneratorSpec&, const PoseState&, const Image&, const Image&) override { return {}; }
};

/// Runs `steps` actions from s0. The spec is only read.
inline Trajectory rollout(Policy& policy, const GeneratorSpec& spec, const PoseState& s0, const Image& target,
                          const EpisodeConfig& cfg) {
    if (cfg.steps < 0) throw std::invalid_argument("rollout: negative step count");
    policy.reset();
    Trajectory tr;
    tr.states.push_back(s0);
    const bool need_image = cfg.record_trajectory || policy.wants_image();
    auto observe = [&](const PoseState& s) {
        if (!need_image) return Image();
        Image img = render(spec, s);
        if (cfg.record_trajectory) {
            tr.losses.push_back(perceptual_loss(img, target));
            tr.images.push_back(img);
        }
        return img;
    };
    Image current = observe(s0);
    for (int k = 0; k < cfg.steps; ++k) {
        const Action a = policy.act(spec, tr.states.back(), current, target);
        tr.actions.push_back(a);
        tr.states.push_back(apply_action(tr.states.back(), a));
        current = observe(tr.states.back());
    }
    return tr;
}

/// Where training episodes start relative to their goal.
///   random:         an independent sample_state draw
///   mean_pose:      mean_pose() (the inference initialization)
///   azimuth_offset: the goal rotated by a uniform azimuth offset, translation kept, z = 0
///   mixed:          mean_pose or azimuth_offset with equal probability
enum class StartMode { random, mean_pose, azimuth_offset, mixed };

inline std::string_view to_string(StartMode m) {
    switch (m) {
        case StartMode::random: return "random";
        case StartMode::mean_pose: return "mean_pose";
        case StartMode::azimuth_offset: return "azimuth_offset";
        case StartMode::mixed: return "mixed";
    }
    return "?";
}

inline StartMode parse_start_mode(std::string_view s) {
    for (auto m : {StartMode::random, StartMode::mean_pose, StartMode::azimuth_offset, StartMode::mixed})
        if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown start mode '" + std::string(s) + "'");
}

template <class Rng>
PoseState sample_start(Rng& rng, const PoseState& goal, StartMode mode, const SamplingRanges& ranges = {}) {
    if (mode == StartMode::mixed)
        mode = std::bernoulli_distribution(0.5)(rng) ? StartMode::mean_pose : StartMode::azimuth_offset;
    switch (mode) {
        case StartMode::random: return sample_state(rng, ranges);
        case StartMode::mean_pose: return mean_pose();
        default: {
            PoseState s = goal;
            s.z = LatentCode();
            const double off = std::uniform_real_distribution<double>(-kPi, kPi)(rng);
            s.theta = EulerPose(wrap_angle(goal.theta.azimuth + off), goal.theta.elevation, goal.theta.inplane);
            return s;
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient-descent policy: the action is the Adam step on the image loss.

struct GdConfig {
    double lr = 0.02;
    int steps = 50;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class GdPolicy final : public Policy {
public:
    explicit GdPolicy(GdConfig cfg = {}) : cfg_(cfg), adam_(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps) {}

    void reset() override {
        adam_ = ad::AdamState(cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps);
        last_loss_ = 0.0;
        last_grad_norm_ = 0.0;
    }
    [[nodiscard]] bool wants_image() const override { return false; }

    Action act(const GeneratorSpec& spec, const PoseState& s, const Image&, const Image& target) override {
        ad::Tape tape;
        const ad::Var x = tape.param(state_array(s));
        const ad::Var loss = perceptual_loss(render(tape, spec, x), tape.constant(target.to_array()));
        ad::Array grad = tape.backward(loss)[x];
        last_loss_ = loss.value().item();
        double sq = 0.0;
        for (double g : grad.data()) sq += g * g;
        last_grad_norm_ = std::sqrt(sq);
        std::array<ad::Array, 1> p{state_array(s)};
        const ad::Array before = p[0];
        std::array<ad::Array, 1> g{std::move(grad)};
        ad::adam_step(adam_, p, g);
        std::array<double, kActionDim> d{};
        for (std::size_t i = 0; i < kActionDim; ++i) d[i] = p[0][i] - before[i];
        return Action::from_vector(d);
    }

    [[nodiscard]] double last_loss() const { return last_loss_; }
    [[nodiscard]] double last_grad_norm() const { return last_grad_norm_; }
    [[nodiscard]] const GdConfig& config() const { return cfg_; }

private:
    GdConfig cfg_;
    ad::AdamState adam_;
    double last_loss_ = 0.0;
    double last_grad_norm_ = 0.0;
};

inline Trajectory gd_rollout(const GeneratorSpec& spec, const PoseState& s0, const Image& target, const GdConfig& cfg,
                             bool record = false) {
    GdPolicy gd(cfg);
    return rollout(gd, spec, s0, target, {cfg.steps, record});
}

struct MultiStartResult {
    PoseState best;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t best_start = 0;
    std::vector<PoseState> finals;
    std::vector<double> losses;
};

/// GD from n_starts states: s0 with azimuth offsets 2*pi*k/n (wrapped, so evenly
/// spread over (-pi, pi]); keeps the final state with the lowest L_p. Ties go to
/// the lower start index.
inline MultiStartResult multi_start_gd(const GeneratorSpec& spec, const Image& target, std::size_t n_starts,
                                       const GdConfig& cfg, const PoseState& s0 = mean_pose()) {
    if (n_starts < 1) throw std::invalid_argument("multi_start_gd: n_starts must be >= 1");
    MultiStartResult r;
    for (std::size_t k = 0; k < n_starts; ++k) {
        PoseState start = s0;
        start.theta = EulerPose(s0.theta.azimuth + 2.0 * kPi * static_cast<double>(k) / static_cast<double>(n_starts),
                                s0.theta.elevation, s0.theta.inplane);
        const PoseState fin = gd_rollout(spec, start, target, cfg).final_state();
        const double loss = perceptual_loss(render(spec, fin), target);
        r.finals.push_back(fin);
        r.losses.push_back(loss);
        if (loss < r.best_loss) {
            r.best_loss = loss;
            r.best = fin;
            r.best_start = k;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Policy network shared by RL and IL.

class PolicyNet {
public:
    static constexpr double kLogStdMin = -5.0;
    static constexpr double kLogStdMax = 2.0;

    PolicyNet() = default;

    /// Two tanh layers of width `hidden` over the 768 observation features, then
    /// linear mean and log-std heads of width 22.
    explicit PolicyNet(std::size_t hidden, std::uint64_t seed) : hidden_(hidden) {
        std::mt19937_64 rng(seed);
        trunk_.push_back(nn::add_dense(params_, "trunk0", kFeatureDim, hidden, nn::Activation::Tanh, rng));
        trunk_.push_back(nn::add_dense(params_, "trunk1", hidden, hidden, nn::Activation::Tanh, rng));
        mean_ = nn::add_dense(params_, "mean", hidden, kActionDim, nn::Activation::Linear, rng, 0.1);
        log_std_ = nn::add_dense(params_, "log_std", hidden, kActionDim, nn::Activation::Linear, rng, 0.1);
        shift_ = ad::Array({1, kFeatureDim}, std::vector<double>(kFeatureDim, 0.0));
        scale_ = ad::Array({1, kFeatureDim}, std::vector<double>(kFeatureDim, 1.0));
    }

    /// Rebuilds a network from loaded weights (the layers, then input.shift and
    /// input.scale), validating names and shapes.
    static PolicyNet from_params(ad::ParamList params) {
        static const char* names[] = {"trunk0.w", "trunk0.b",  "trunk1.w",  "trunk1.b",    "mean.w",
                                      "mean.b",   "log_std.w", "log_std.b", "input.shift", "input.scale"};
        if (params.size() != 10) throw ad::FormatError("policy weights: expected 10 tensors");
        for (std::size_t i = 0; i < 10; ++i)
            if (params[i].name != names[i]) throw ad::FormatError("policy weights: unexpected tensor " + params[i].name);
        if (params[0].value.rank() != 2 || params[0].value.dim(0) != kFeatureDim)
            throw ad::FormatError("policy weights: first layer must take 768 inputs");
        PolicyNet net;
        net.hidden_ = params[0].value.dim(1);
        const std::size_t h = net.hidden_;
        const ad::Shape expect[8] = {{kFeatureDim, h}, {1, h}, {h, h}, {1, h},
                                     {h, kActionDim},  {1, kActionDim}, {h, kActionDim}, {1, kActionDim}};
        for (std::size_t i = 0; i < 8; ++i)
            if (params[i].value.shape() != expect[i])
                throw ad::FormatError("policy weights: bad shape for " + params[i].name);
        for (std::size_t i = 8; i < 10; ++i)
            if (params[i].value.shape() != ad::Shape{1, kFeatureDim})
                throw ad::FormatError("policy weights: bad shape for " + params[i].name);
        net.scale_ = std::move(params[9].value);
        net.shift_ = std::move(params[8].value);
        params.resize(8);
        net.params_ = std::move(params);
        net.trunk_ = {{0, 1, nn::Activation::Tanh}, {2, 3, nn::Activation::Tanh}};
        net.mean_ = {4, 5, nn::Activation::Linear};
        net.log_std_ = {6, 7, nn::Activation::Linear};
        return net;
    }

    static PolicyNet load(const std::filesystem::path& path) { return from_params(ad::load_weights(path)); }
    void save(const std::filesystem::path& path) const { ad::save_weights(path, all_params()); }

    /// Layers followed by the input normalizer, the layout of the weight file.
    [[nodiscard]] ad::ParamList all_params() const {
        ad::ParamList all = params_;
        all.push_back({"input.shift", shift_});
        all.push_back({"input.scale", scale_});
        return all;
    }

    /// Sets the input normalizer to per-feature standardization over `rows`:
    /// x' = (x - mean) / (std + 1e-3).
    void fit_normalizer(std::span<const Features> rows) {
        if (rows.empty()) throw std::invalid_argument("fit_normalizer: no rows");
        const double n = static_cast<double>(rows.size());
        for (std::size_t j = 0; j < kFeatureDim; ++j) {
            double mean = 0.0;
            for (const auto& r : rows) mean += r[j];
            mean /= n;
            double ss = 0.0;
            for (const auto& r : rows) ss += (r[j] - mean) * (r[j] - mean);
            shift_[j] = -mean;
            scale_[j] = 1.0 / (std::sqrt(ss / n) + 1e-3);
        }
    }

    /// Applies the input normalizer to a [B,768] batch in place. Every forward
    /// below expects normalized input; mean_action() normalizes itself.
    void normalize(ad::Array& x) const {
        const std::size_t rows = x.dim(0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < kFeatureDim; ++j) {
                double& v = x[r * kFeatureDim + j];
                v = (v + shift_[j]) * scale_[j];
            }
    }

    [[nodiscard]] ad::Array normalized_batch(const Features& f) const {
        ad::Array x = feature_batch(f);
        normalize(x);
        return x;
    }

    [[nodiscard]] std::size_t hidden() const { return hidden_; }
    [[nodiscard]] const ad::ParamList& params() const { return params_; }
    [[nodiscard]] ad::ParamList& params() { return params_; }

    struct TapeHeads {
        ad::Var mean_raw;  // [B,22], pre-squash
        ad::Var log_std;   // [B,22], clamped
    };

    [[nodiscard]] TapeHeads forward(const std::vector<ad::Var>& vars, const ad::Var& x) const {
        const ad::Var h = nn::apply(vars, trunk_, x);
        return {nn::apply(vars, {mean_}, h),
                ad::clip(nn::apply(vars, {log_std_}, h), kLogStdMin, kLogStdMax)};
    }

    /// Mean head only; IL never needs the log-std branch.
    [[nodiscard]] ad::Var forward_mean(const std::vector<ad::Var>& vars, const ad::Var& x) const {
        return nn::apply(vars, {mean_}, nn::apply(vars, trunk_, x));
    }

    struct Heads {
        ad::Array mean_raw;
        ad::Array log_std;
    };

    [[nodiscard]] Heads heads(const ad::Array& x) const {
        const ad::Array h = nn::apply(params_, trunk_, x);
        Heads out{nn::apply(params_, {mean_}, h), nn::apply(params_, {log_std_}, h)};
        for (double& v : out.log_std.data()) v = std::clamp(v, kLogStdMin, kLogStdMax);
        return out;
    }

    /// Deterministic action: bounds * tanh(mean).
    [[nodiscard]] Action mean_action(const Features& f) const {
        const ad::Array m = nn::apply(params_, {mean_}, nn::apply(params_, trunk_, normalized_batch(f)));
        return squash(m.data());
    }

    static Action squash(std::span<const double> raw) {
        const auto& b = action_bounds();
        std::array<double, kActionDim> v{};
        for (std::size_t i = 0; i < kActionDim; ++i) v[i] = b[i] * std::tanh(raw[i]);
        return Action::from_vector(v);
    }

    friend bool operator==(const PolicyNet& a, const PolicyNet& b) {
        return a.params_ == b.params_ && a.shift_ == b.shift_ && a.scale_ == b.scale_;
    }

private:
    std::size_t hidden_ = 0;
    ad::ParamList params_;
    std::vector<nn::Layer> trunk_;
    nn::Layer mean_;
    nn::Layer log_std_;
    ad::Array shift_;  // [1,768] added, then
    ad::Array scale_;  // [1,768] multiplied
};

/// Learned policy in deterministic (mean-action) mode.
class NetPolicy final : public Policy {
public:
    explicit NetPolicy(std::shared_ptr<const PolicyNet> net) : net_(std::move(net)) {}

    Action act(const GeneratorSpec&, const PoseState&, const Image& current, const Image& target) override {
        return net_->mean_action(encode_observation(current, target));
    }

    [[nodiscard]] const PolicyNet& net() const { return *net_; }

private:
    std::shared_ptr<const PolicyNet> net_;
};

}  // namespace pnav
