#pragma once

// Soft actor-critic over the navigation task: replay buffer, twin critics with
// target copies, tanh-Gaussian actor, learned temperature, hindsight
// relabelling of failed episodes and injection of one-step expert transitions.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "pnav/eval_metrics.hpp"
#include "pnav/generator.hpp"
#include "pnav/nn.hpp"
#include "pnav/objective.hpp"
#include "pnav/policy.hpp"

namespace pnav {

struct Transition {
    Features obs;
    Action action;
    double reward = 0.0;
    Features next_obs;
    bool done = false;
    PoseState goal;
    PoseState state;
    PoseState next_state;
};

/// Fixed-capacity ring; once full, each push overwrites the oldest entry.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    }

    void push(Transition t) {
        if (items_.size() < capacity_) {
            items_.push_back(std::move(t));
        } else {
            items_[cursor_] = std::move(t);
        }
        cursor_ = (cursor_ + 1) % capacity_;
        ++pushed_;
    }

    [[nodiscard]] std::size_t size() const { return items_.size(); }
    [[nodiscard]] std::size_t capacity() const { return capacity_; }
    [[nodiscard]] std::uint64_t total_pushed() const { return pushed_; }

    /// i-th oldest stored transition.
    [[nodiscard]] const Transition& oldest(std::size_t i) const {
        if (i >= items_.size()) throw std::out_of_range("ReplayBuffer::oldest");
        const std::size_t start = items_.size() < capacity_ ? 0 : cursor_;
        return items_[(start + i) % items_.size()];
    }

    template <class Rng>
    std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n) const {
        if (items_.size() < n) throw std::invalid_argument("ReplayBuffer: fewer transitions than batch size");
        std::uniform_int_distribution<std::size_t> u(0, items_.size() - 1);
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = u(rng);
        return idx;
    }
    [[nodiscard]] const Transition& at(std::size_t i) const { return items_.at(i); }

private:
    std::size_t capacity_;
    std::vector<Transition> items_;
    std::size_t cursor_ = 0;
    std::uint64_t pushed_ = 0;
};

struct SacConfig {
    double gamma = 0.9;
    double tau = 0.005;
    std::size_t batch = 256;
    double actor_lr = 3e-4;
    double critic_lr = 3e-4;
    double alpha_lr = 3e-4;
    double init_log_alpha = 0.0;
    double target_entropy = -22.0;
    int steps_per_episode = 10;
    int episodes = 20000;
    std::size_t capacity = 200000;
    std::size_t hidden = 256;
    bool relabel = true;
    double relabel_threshold_deg = 30.0;  // a trial fails when its final rotation error exceeds this
    int expert_inject_every = 50;         // 0 disables injection
    std::size_t expert_inject_count = 64;
    int eval_every = 100;                 // 0 disables the periodic evaluation column
    std::size_t eval_episodes = 10;
    StartMode start = StartMode::mixed;
    LossWeights weights;
    SamplingRanges ranges;
};

/// Actor, twin critics and their targets, temperature, and optimiser states.
struct SacAgent {
    PolicyNet actor;
    ad::ParamList critic;         // q1.* then q2.*
    ad::ParamList critic_target;  // same layout
    std::vector<nn::Layer> q1;
    std::vector<nn::Layer> q2;
    double log_alpha = 0.0;
    ad::AdamState actor_opt;
    ad::AdamState critic_opt;
    ad::AdamState alpha_opt;

    template <class Rng>
    static SacAgent create(const SacConfig& cfg, Rng& rng) {
        SacAgent a;
        a.actor = PolicyNet(cfg.hidden, rng());
        const std::size_t in = kFeatureDim + kActionDim;
        for (int k = 0; k < 2; ++k) {
            const std::string p = k == 0 ? "q1" : "q2";
            auto& layers = k == 0 ? a.q1 : a.q2;
            layers.push_back(nn::add_dense(a.critic, p + ".l0", in, cfg.hidden, nn::Activation::Tanh, rng));
            layers.push_back(nn::add_dense(a.critic, p + ".l1", cfg.hidden, cfg.hidden, nn::Activation::Tanh, rng));
            layers.push_back(nn::add_dense(a.critic, p + ".out", cfg.hidden, 1, nn::Activation::Linear, rng));
        }
        a.critic_target = a.critic;
        a.log_alpha = cfg.init_log_alpha;
        a.actor_opt = ad::AdamState(cfg.actor_lr);
        a.critic_opt = ad::AdamState(cfg.critic_lr);
        a.alpha_opt = ad::AdamState(cfg.alpha_lr);
        return a;
    }

    [[nodiscard]] double alpha() const { return std::exp(log_alpha); }
};

struct SacDiagnostics {
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double alpha = 0.0;
};

namespace detail {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;
inline constexpr double kSquashEps = 1e-6;

struct Batch {
    ad::Array obs;       // [B,768], raw until sac_update normalizes it
    ad::Array next_obs;  // [B,768]
    ad::Array actions;   // [B,22]
    std::vector<double> rewards;
    std::vector<double> done;
};

inline Batch gather(const ReplayBuffer& buf, std::span<const std::size_t> idx) {
    Batch b;
    std::vector<const Features*> o, n;
    b.actions = ad::Array({idx.size(), kActionDim});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const Transition& t = buf.at(idx[r]);
        o.push_back(&t.obs);
        n.push_back(&t.next_obs);
        const auto a = t.action.to_vector();
        std::copy(a.begin(), a.end(), b.actions.data().begin() + static_cast<std::ptrdiff_t>(r * kActionDim));
        b.rewards.push_back(t.reward);
        b.done.push_back(t.done ? 1.0 : 0.0);
    }
    b.obs = feature_batch(o);
    b.next_obs = feature_batch(n);
    return b;
}

inline ad::Array hcat(const ad::Array& a, const ad::Array& b) {
    const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    ad::Array out({rows, ca + cb});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(r * ca), ca,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * (ca + cb)));
        std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(r * cb), cb,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * (ca + cb) + ca));
    }
    return out;
}

/// Reparameterised tanh-Gaussian sample without a tape: actions [B,22] and log-probs.
struct Sample {
    ad::Array actions;
    std::vector<double> log_prob;
};

inline Sample sample_actions(const PolicyNet& actor, const ad::Array& obs, const ad::Array& noise) {
    const auto h = actor.heads(obs);
    const std::size_t rows = obs.dim(0);
    Sample s{ad::Array({rows, kActionDim}), std::vector<double>(rows, 0.0)};
    const auto& b = action_bounds();
    for (std::size_t r = 0; r < rows; ++r) {
        double lp = 0.0;
        for (std::size_t i = 0; i < kActionDim; ++i) {
            const std::size_t k = r * kActionDim + i;
            const double ls = h.log_std[k];
            const double u = h.mean_raw[k] + std::exp(ls) * noise[k];
            const double t = std::tanh(u);
            s.actions[k] = b[i] * t;
            lp += -0.5 * noise[k] * noise[k] - ls - kHalfLog2Pi - std::log(b[i] * (1.0 - t * t) + kSquashEps);
        }
        s.log_prob[r] = lp;
    }
    return s;
}

template <class Rng>
ad::Array gaussian(Rng& rng, std::size_t rows) {
    std::normal_distribution<double> n01;
    ad::Array e({rows, kActionDim});
    for (double& v : e.data()) v = n01(rng);
    return e;
}

}  // namespace detail

/// Bootstrapped critic targets y = r + gamma (1 - done) (min target Q(s', a') - alpha log pi(a'|s')).
inline std::vector<double> critic_targets(const SacAgent& agent, const detail::Batch& b, const SacConfig& cfg,
                                          const ad::Array& next_noise) {
    const auto next = detail::sample_actions(agent.actor, b.next_obs, next_noise);
    const ad::Array x = detail::hcat(b.next_obs, next.actions);
    const ad::Array t1 = nn::apply(agent.critic_target, agent.q1, x);
    const ad::Array t2 = nn::apply(agent.critic_target, agent.q2, x);
    std::vector<double> y(b.rewards.size());
    for (std::size_t r = 0; r < y.size(); ++r) {
        const double soft = std::min(t1[r], t2[r]) - agent.alpha() * next.log_prob[r];
        y[r] = b.rewards[r] + cfg.gamma * (1.0 - b.done[r]) * soft;
    }
    return y;
}

/// One step each on the critics, the actor and the temperature, then a soft target update.
template <class Rng>
SacDiagnostics sac_update(SacAgent& agent, const ReplayBuffer& buffer, const SacConfig& cfg, Rng& rng) {
    const auto idx = buffer.sample_indices(rng, cfg.batch);
    detail::Batch b = detail::gather(buffer, idx);
    agent.actor.normalize(b.obs);
    agent.actor.normalize(b.next_obs);
    const std::size_t rows = idx.size();
    SacDiagnostics d;

    // Critics.
    {
        const auto y = critic_targets(agent, b, cfg, detail::gaussian(rng, rows));
        ad::Tape tape;
        const auto vars = nn::record(tape, agent.critic, true);
        const ad::Var x = tape.constant(detail::hcat(b.obs, b.actions));
        const ad::Var target = tape.constant(ad::Array({rows, 1}, std::vector<double>(y)));
        const ad::Var loss = ad::mean(ad::square(nn::apply(vars, agent.q1, x) - target)) +
                             ad::mean(ad::square(nn::apply(vars, agent.q2, x) - target));
        nn::adam_update(agent.critic_opt, agent.critic, nn::collect(tape.backward(loss), vars));
        d.critic_loss = loss.value().item();
    }

    // Actor and temperature.
    double mean_log_prob = 0.0;
    {
        ad::Tape tape;
        const auto vars = nn::record(tape, agent.actor.params(), true);
        const auto cvars = nn::record(tape, agent.critic, false);
        const ad::Var obs = tape.constant(b.obs);
        const auto heads = agent.actor.forward(vars, obs);
        const ad::Var eps = tape.constant(detail::gaussian(rng, rows));
        const ad::Var u = heads.mean_raw + ad::exp(heads.log_std) * eps;
        const ad::Var t = ad::tanh(u);
        ad::Array bounds({1, kActionDim});
        for (std::size_t i = 0; i < kActionDim; ++i) bounds[i] = action_bounds()[i];
        const ad::Var bv = tape.constant(bounds);
        const ad::Var a = t * bv;
        const ad::Var log_prob = ad::sum(ad::square(eps) * -0.5 - heads.log_std - detail::kHalfLog2Pi -
                                             ad::log(bv * (1.0 - ad::square(t)) + detail::kSquashEps),
                                         1);  // [B,1]
        const ad::Var x = ad::concat({obs, a}, 1);
        const ad::Var q1 = nn::apply(cvars, agent.q1, x), q2 = nn::apply(cvars, agent.q2, x);
        ad::Array pick({rows, 1});
        for (std::size_t r = 0; r < rows; ++r) pick[r] = q1.value()[r] <= q2.value()[r] ? 1.0 : 0.0;
        const ad::Var m = tape.constant(pick);
        const ad::Var qmin = q1 * m + q2 * (1.0 - m);
        const ad::Var loss = ad::mean(log_prob * agent.alpha() - qmin);
        nn::adam_update(agent.actor_opt, agent.actor.params(), nn::collect(tape.backward(loss), vars));
        d.actor_loss = loss.value().item();
        for (double v : log_prob.value().data()) mean_log_prob += v;
        mean_log_prob /= static_cast<double>(rows);
    }
    {
        std::array<ad::Array, 1> p{ad::Array::scalar(agent.log_alpha)};
        std::array<ad::Array, 1> g{ad::Array::scalar(-(mean_log_prob + cfg.target_entropy))};
        ad::adam_step(agent.alpha_opt, p, g);
        agent.log_alpha = p[0].item();
    }
    nn::soft_update(agent.critic_target, agent.critic, cfg.tau);
    d.alpha = agent.alpha();
    return d;
}

/// Transitions of a recorded trajectory re-targeted at its own final state.
/// Observations use the re-rendered final image; rewards are recomputed from
/// stored states and actions only.
inline std::vector<Transition> hindsight_relabel(const GeneratorSpec& spec, const Trajectory& traj,
                                                 const LossWeights& w = {}) {
    if (traj.steps() < 1) throw std::invalid_argument("hindsight_relabel: empty trajectory");
    const PoseState goal = traj.final_state();
    const Image target = render(spec, goal);
    auto image_at = [&](std::size_t k) { return k < traj.images.size() ? traj.images[k] : render(spec, traj.states[k]); };
    std::vector<Transition> out;
    Features obs = encode_observation(image_at(0), target);
    for (std::size_t k = 0; k < traj.steps(); ++k) {
        Transition t;
        t.obs = std::move(obs);
        t.action = traj.actions[k];
        t.reward = reward(goal, traj.states[k], traj.actions[k], w);
        t.next_obs = encode_observation(image_at(k + 1), target);
        t.done = k + 1 == traj.steps();
        t.goal = goal;
        t.state = traj.states[k];
        t.next_state = traj.states[k + 1];
        obs = t.next_obs;
        out.push_back(std::move(t));
    }
    return out;
}

/// n one-step successes: random state and goal, action = clamped residual, done = true.
template <class Rng>
void inject_expert(ReplayBuffer& buffer, const GeneratorSpec& spec, Rng& rng, std::size_t n,
                   const SamplingRanges& ranges = {}, const LossWeights& w = {}) {
    for (std::size_t i = 0; i < n; ++i) {
        const PoseState s = sample_state(rng, ranges);
        const PoseState goal = sample_state(rng, ranges);
        const Image target = render(spec, goal);
        Transition t;
        t.action = expert_action(goal, s);
        t.reward = reward(goal, s, t.action, w);
        t.state = s;
        t.goal = goal;
        t.next_state = apply_action(s, t.action);
        t.obs = encode_observation(render(spec, s), target);
        t.next_obs = encode_observation(render(spec, t.next_state), target);
        t.done = true;
        buffer.push(std::move(t));
    }
}

/// Stochastic actor action for one observation.
template <class Rng>
Action sample_action(const PolicyNet& actor, const Features& f, Rng& rng) {
    const auto s = detail::sample_actions(actor, actor.normalized_batch(f), detail::gaussian(rng, 1));
    return Action::from_vector(s.actions.data());
}

struct RlLogRow {
    int episode = 0;
    double mean_reward = 0.0;
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double alpha = 0.0;
    std::optional<double> eval_rot_err_median;  // degrees; present every eval_every episodes
};

struct RlResult {
    SacAgent agent;
    std::vector<RlLogRow> log;
};

/// Median final rotation error (degrees) of the mean-action policy from the mean
/// pose on `n` held-out goals drawn from `seed`.
inline double heldout_rotation_median(const GeneratorSpec& spec, const PolicyNet& net, std::size_t n, int steps,
                                      std::uint64_t seed, const SamplingRanges& ranges = {}) {
    std::mt19937_64 rng(seed);
    auto shared = std::make_shared<const PolicyNet>(net);
    std::vector<double> errs;
    for (std::size_t i = 0; i < n; ++i) {
        const PoseState goal = sample_state(rng, ranges);
        NetPolicy p(shared);
        const auto tr = rollout(p, spec, mean_pose(ranges), render(spec, goal), {steps, false});
        errs.push_back(episode_error(tr.final_state(), goal, spec.symmetry_axis).rotation * 180.0 / kPi);
    }
    return median(errs);
}

inline RlResult train_rl(const GeneratorSpec& spec, const SacConfig& cfg, std::uint64_t seed) {
    if (cfg.tau <= 0.0 || cfg.tau > 1.0) throw std::invalid_argument("train_rl: tau must lie in (0, 1]");
    std::mt19937_64 rng(seed);
    RlResult res{SacAgent::create(cfg, rng), {}};
    SacAgent& agent = res.agent;
    ReplayBuffer buffer(cfg.capacity);
    const std::uint64_t eval_seed = rng();
    {
        // Input normalizer from observations of the training start distribution.
        std::vector<Features> warm;
        for (std::size_t i = 0; i < std::max<std::size_t>(cfg.batch, 256); ++i) {
            const PoseState g = sample_state(rng, cfg.ranges);
            warm.push_back(encode_observation(render(spec, sample_start(rng, g, cfg.start, cfg.ranges)), render(spec, g)));
        }
        agent.actor.fit_normalizer(warm);
    }
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        const PoseState goal = sample_state(rng, cfg.ranges);
        PoseState s = sample_start(rng, goal, cfg.start, cfg.ranges);
        s.z = LatentCode();
        const Image target = render(spec, goal);
        Trajectory tr;
        tr.states.push_back(s);
        tr.images.push_back(render(spec, s));
        Features obs = encode_observation(tr.images.back(), target);
        RlLogRow row;
        row.episode = ep;
        int updates = 0;
        for (int k = 0; k < cfg.steps_per_episode; ++k) {
            const Action a = sample_action(agent.actor, obs, rng);
            const PoseState next = apply_action(s, a);
            tr.actions.push_back(a);
            tr.states.push_back(next);
            tr.images.push_back(render(spec, next));
            Transition t;
            t.obs = obs;
            t.action = a;
            t.reward = reward(goal, s, a, cfg.weights);
            t.next_obs = encode_observation(tr.images.back(), target);
            t.done = k + 1 == cfg.steps_per_episode;
            t.goal = goal;
            t.state = s;
            t.next_state = next;
            row.mean_reward += t.reward;
            obs = t.next_obs;
            buffer.push(std::move(t));
            s = next;
            if (buffer.size() >= cfg.batch) {
                const auto d = sac_update(agent, buffer, cfg, rng);
                row.critic_loss += d.critic_loss;
                row.actor_loss += d.actor_loss;
                ++updates;
            }
        }
        row.mean_reward /= static_cast<double>(std::max(cfg.steps_per_episode, 1));
        if (updates > 0) {
            row.critic_loss /= updates;
            row.actor_loss /= updates;
        }
        row.alpha = agent.alpha();
        if (cfg.relabel && !tr.actions.empty()) {
            const double err = episode_error(tr.final_state(), goal, spec.symmetry_axis).rotation;
            if (err > cfg.relabel_threshold_deg * kPi / 180.0)
                for (auto& t : hindsight_relabel(spec, tr, cfg.weights)) buffer.push(std::move(t));
        }
        if (cfg.expert_inject_every > 0 && (ep + 1) % cfg.expert_inject_every == 0)
            inject_expert(buffer, spec, rng, cfg.expert_inject_count, cfg.ranges, cfg.weights);
        if (cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0)
            row.eval_rot_err_median = heldout_rotation_median(spec, agent.actor, cfg.eval_episodes,
                                                              cfg.steps_per_episode, eval_seed, cfg.ranges);
        res.log.push_back(row);
    }
    return res;
}

}  // namespace pnav
