#pragma once

// Imitation learning: behaviour cloning on simulator-labelled pairs, DAgger
// aggregation of on-policy states, and the learned-policy -> GD hybrid.

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pnav/generator.hpp"
#include "pnav/nn.hpp"
#include "pnav/objective.hpp"
#include "pnav/policy.hpp"

namespace pnav {

/// Growable set of (observation features, expert action) pairs. Append-only.
struct DemoSet {
    std::vector<Features> features;
    std::vector<Action> actions;

    [[nodiscard]] std::size_t size() const { return features.size(); }
    void append(Features f, const Action& a) {
        features.push_back(std::move(f));
        actions.push_back(a);
    }
};

struct IlConfig {
    LossWeights weights;
    std::size_t demos = 50000;  // initial BC pairs
    int epochs = 20;
    std::size_t batch = 256;
    double lr = 1e-3;
    std::size_t hidden = 256;
    int dagger_rounds = 5;
    std::size_t rollouts_per_round = 200;
    int rollout_steps = 10;       // T of DAgger collection
    int finetune_epochs = 5;      // epochs per DAgger round
    bool from_scratch = false;    // retrain a fresh network each round instead of fine-tuning
    int inference_steps = 0;      // evaluation steps; 0 picks 1 for BC and rollout_steps for DAgger
    bool use_latent_loss = true;
    StartMode start = StartMode::mixed;  // BC pairs and DAgger rollouts
    SamplingRanges ranges;
};

/// Per-epoch training record.
struct IlLogRow {
    int round = 0;  // 0 = initial behaviour cloning
    int epoch = 0;
    std::size_t dataset_size = 0;
    double mean_loss = 0.0;
};

struct IlResult {
    PolicyNet net;
    std::vector<IlLogRow> log;
    std::size_t dataset_size = 0;
};

/// n (state, goal) pairs with goal ~ sample_state and the state drawn by `start`; label = clamped residual.
template <class Rng>
DemoSet make_bc_dataset(const GeneratorSpec& spec, Rng& rng, std::size_t n, const SamplingRanges& ranges = {},
                        StartMode start = StartMode::random) {
    if (n < 1) throw std::invalid_argument("make_bc_dataset: n must be >= 1");
    DemoSet d;
    d.features.reserve(n);
    d.actions.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const PoseState goal = sample_state(rng, ranges);
        const PoseState s = sample_start(rng, goal, start, ranges);
        d.append(encode_observation(render(spec, s), render(spec, goal)), expert_action(goal, s));
    }
    return d;
}

namespace detail {

inline ad::Array action_batch(const DemoSet& d, std::span<const std::size_t> idx) {
    ad::Array y({idx.size(), kActionDim});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto v = d.actions[idx[r]].to_vector();
        std::copy(v.begin(), v.end(), y.data().begin() + static_cast<std::ptrdiff_t>(r * kActionDim));
    }
    return y;
}

/// Minibatch Adam on il_loss over the whole set for `epochs` passes.
template <class Rng>
void fit(PolicyNet& net, ad::AdamState& adam, const DemoSet& d, const IlConfig& cfg, int epochs, int round, Rng& rng,
         std::vector<IlLogRow>& log) {
    std::vector<std::size_t> order(d.size());
    for (int e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            std::vector<const Features*> rows;
            rows.reserve(idx.size());
            for (auto i : idx) rows.push_back(&d.features[i]);
            ad::Array x = feature_batch(rows);
            net.normalize(x);
            ad::Tape tape;
            const auto vars = nn::record(tape, net.params(), true);
            const ad::Var pred = squash_actions(net.forward_mean(vars, tape.constant(std::move(x))));
            const ad::Var loss = il_loss(pred, action_batch(d, idx), cfg.weights, cfg.use_latent_loss);
            const auto grads = nn::collect(tape.backward(loss), vars);
            nn::adam_update(adam, net.params(), grads);
            total += loss.value().item() * static_cast<double>(idx.size());
            seen += idx.size();
        }
        log.push_back({round, e, d.size(), total / static_cast<double>(std::max<std::size_t>(seen, 1))});
    }
}

}  // namespace detail

/// Behaviour cloning on a fresh dataset drawn from `seed`.
inline IlResult train_bc(const GeneratorSpec& spec, const IlConfig& cfg, std::uint64_t seed, DemoSet* demos_out = nullptr) {
    std::mt19937_64 rng(seed);
    IlResult r;
    r.net = PolicyNet(cfg.hidden, rng());
    DemoSet d = make_bc_dataset(spec, rng, cfg.demos, cfg.ranges, cfg.start);
    r.net.fit_normalizer(d.features);
    ad::AdamState adam(cfg.lr);
    detail::fit(r.net, adam, d, cfg, cfg.epochs, 0, rng, r.log);
    r.dataset_size = d.size();
    if (demos_out) *demos_out = std::move(d);
    return r;
}

/// DAgger: round 0 is train_bc with the same seed; each later round rolls the
/// current policy out in mean-action mode from `cfg.start` starts (z = 0), labels
/// every visited state with the simulator residual, appends, and retrains.
/// When `bc_out` is given it receives the round-0 network, which equals
/// train_bc(spec, cfg, seed).net.
inline IlResult train_dagger(const GeneratorSpec& spec, const IlConfig& cfg, std::uint64_t seed,
                             DemoSet* demos_out = nullptr, PolicyNet* bc_out = nullptr) {
    if (cfg.dagger_rounds < 0) throw std::invalid_argument("train_dagger: dagger_rounds must be >= 0");
    std::mt19937_64 rng(seed);
    IlResult r;
    r.net = PolicyNet(cfg.hidden, rng());
    DemoSet d = make_bc_dataset(spec, rng, cfg.demos, cfg.ranges, cfg.start);
    r.net.fit_normalizer(d.features);
    ad::AdamState adam(cfg.lr);
    detail::fit(r.net, adam, d, cfg, cfg.epochs, 0, rng, r.log);
    if (bc_out) *bc_out = r.net;
    for (int round = 1; round <= cfg.dagger_rounds; ++round) {
        for (std::size_t ep = 0; ep < cfg.rollouts_per_round; ++ep) {
            const PoseState goal = sample_state(rng, cfg.ranges);
            PoseState s = sample_start(rng, goal, cfg.start, cfg.ranges);
            s.z = LatentCode();
            const Image target = render(spec, goal);
            for (int k = 0; k < cfg.rollout_steps; ++k) {
                Features f = encode_observation(render(spec, s), target);
                const Action a = r.net.mean_action(f);
                d.append(std::move(f), expert_action(goal, s));
                s = apply_action(s, a);
            }
        }
        if (cfg.from_scratch) {
            r.net = PolicyNet(cfg.hidden, rng());
            r.net.fit_normalizer(d.features);
            adam = ad::AdamState(cfg.lr);
            detail::fit(r.net, adam, d, cfg, cfg.epochs, round, rng, r.log);
        } else {
            detail::fit(r.net, adam, d, cfg, cfg.finetune_epochs, round, rng, r.log);
        }
    }
    r.dataset_size = d.size();
    if (demos_out) *demos_out = std::move(d);
    return r;
}

/// Learned policy for il_steps, then GD for gd_steps from where it stopped.
inline Trajectory hybrid_rollout(Policy& policy, const GeneratorSpec& spec, const PoseState& s0, const Image& target,
                                 int il_steps, int gd_steps, GdConfig gd_cfg, bool record = false) {
    if (il_steps < 0 || gd_steps < 0) throw std::invalid_argument("hybrid_rollout: negative step count");
    Trajectory tr = rollout(policy, spec, s0, target, {il_steps, record});
    if (gd_steps == 0) return tr;
    gd_cfg.steps = gd_steps;
    Trajectory tail = gd_rollout(spec, tr.final_state(), target, gd_cfg, record);
    tr.states.insert(tr.states.end(), tail.states.begin() + 1, tail.states.end());
    tr.actions.insert(tr.actions.end(), tail.actions.begin(), tail.actions.end());
    if (record) {
        tr.images.insert(tr.images.end(), tail.images.begin() + 1, tail.images.end());
        tr.losses.insert(tr.losses.end(), tail.losses.begin() + 1, tail.losses.end());
    }
    return tr;
}

/// Writes `<stem>.csv` (header a0..a21,offset; one row per pair) and
/// `<stem>.bin` (float32 little-endian features, 768 per pair, at byte `offset`).
inline void export_demos(const DemoSet& d, const std::filesystem::path& stem) {
    std::filesystem::path csv_path = stem, bin_path = stem;
    csv_path += ".csv";
    bin_path += ".bin";
    std::ofstream csv(csv_path, std::ios::binary), bin(bin_path, std::ios::binary);
    if (!csv || !bin) throw std::runtime_error("cannot write demo export at " + stem.string());
    for (std::size_t i = 0; i < kActionDim; ++i) csv << 'a' << i << ',';
    csv << "offset\n";
    std::uint64_t offset = 0;
    char buf[32];
    for (std::size_t r = 0; r < d.size(); ++r) {
        for (double v : d.actions[r].to_vector()) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            csv << buf << ',';
        }
        csv << offset << '\n';
        for (float f : d.features[r]) {
            const auto bits = std::bit_cast<std::uint32_t>(f);
            const char le[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                                static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
            bin.write(le, 4);
        }
        offset += 4 * kFeatureDim;
    }
}

}  // namespace pnav
