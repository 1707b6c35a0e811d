#pragma once

// Evaluation protocols: held-out episodes, the azimuth initialization sweep,
// target-image disturbances, inference timing, and long-format CSV reports.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "pnav/csv.hpp"
#include "pnav/eval_metrics.hpp"
#include "pnav/generator.hpp"
#include "pnav/il.hpp"
#include "pnav/policy.hpp"

namespace pnav {

struct Thresholds {
    std::vector<double> rotation_deg{10.0, 30.0, 60.0};
    std::vector<double> translation{0.05, 0.10, 0.15};

    void validate() const {
        for (const auto* list : {&rotation_deg, &translation}) {
            for (std::size_t i = 0; i < list->size(); ++i) {
                if (!((*list)[i] > 0.0)) throw std::invalid_argument("thresholds must be positive");
                if (i > 0 && !((*list)[i] > (*list)[i - 1]))
                    throw std::invalid_argument("thresholds must be strictly increasing");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Disturbances

struct Disturbance {
    enum class Kind { brightness, occlusion, shift };
    Kind kind = Kind::brightness;
    double magnitude = 1.0;

    void validate() const {
        switch (kind) {
            case Kind::brightness:
                if (!(magnitude > 0.0)) throw std::invalid_argument("brightness factor must be > 0");
                break;
            case Kind::occlusion:
                if (!(magnitude >= 0.0 && magnitude <= 0.5)) throw std::invalid_argument("occlusion fraction must lie in [0, 0.5]");
                break;
            case Kind::shift:
                if (!(magnitude >= 0.0 && magnitude <= 0.25)) throw std::invalid_argument("shift must lie in [0, 0.25]");
                break;
        }
    }

    /// "brightness=1.5", "occlusion=0.2", "shift=0.1".
    [[nodiscard]] std::string label() const {
        const char* k = kind == Kind::brightness ? "brightness" : kind == Kind::occlusion ? "occlusion" : "shift";
        return std::string(k) + "=" + csv::number(magnitude);
    }

    static Disturbance parse(std::string_view text) {
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw std::invalid_argument("disturbance must look like kind=magnitude");
        const std::string_view k = text.substr(0, eq);
        Disturbance d;
        if (k == "brightness") d.kind = Kind::brightness;
        else if (k == "occlusion") d.kind = Kind::occlusion;
        else if (k == "shift") d.kind = Kind::shift;
        else throw std::invalid_argument("unknown disturbance kind '" + std::string(k) + "'");
        const std::string value(text.substr(eq + 1));
        std::size_t used = 0;
        try {
            d.magnitude = std::stod(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != value.size()) throw std::invalid_argument("bad disturbance magnitude '" + value + "'");
        d.validate();
        return d;
    }
};

/// Applies one disturbance. Only occlusion draws from `rng` (the square's position).
template <class Rng>
Image apply_disturbance(const Image& img, const Disturbance& d, Rng& rng, double background = 0.05) {
    d.validate();
    Image out = img;
    const std::size_t w = img.width, h = img.height;
    switch (d.kind) {
        case Disturbance::Kind::brightness:
            for (double& v : out.values) v = std::clamp(v * d.magnitude, 0.0, 1.0);
            break;
        case Disturbance::Kind::occlusion: {
            const auto side = std::min<std::size_t>(
                static_cast<std::size_t>(std::lround(std::sqrt(d.magnitude * static_cast<double>(w * h)))), std::min(w, h));
            const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, w - side)(rng);
            const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, h - side)(rng);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = y0; y < y0 + side; ++y)
                    for (std::size_t x = x0; x < x0 + side; ++x) out.at(c, y, x) = background;
            break;
        }
        case Disturbance::Kind::shift: {
            const auto k = static_cast<std::size_t>(std::lround(d.magnitude * static_cast<double>(w)));
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) out.at(c, (y + k) % h, (x + k) % w) = img.at(c, y, x);
            break;
        }
    }
    return out;
}

inline std::vector<Disturbance> default_disturbance_grid() {
    using K = Disturbance::Kind;
    return {{K::brightness, 1.0}, {K::brightness, 0.5}, {K::brightness, 1.5}, {K::occlusion, 0.1},
            {K::occlusion, 0.2},  {K::occlusion, 0.3},  {K::shift, 0.05},     {K::shift, 0.1}};
}

// ---------------------------------------------------------------------------
// Policies under evaluation

enum class PolicyKind { gd, gd16, gd32, rl, bc, dagger, rl_gd, dagger_gd };

inline std::string_view to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::gd: return "gd";
        case PolicyKind::gd16: return "gd16";
        case PolicyKind::gd32: return "gd32";
        case PolicyKind::rl: return "rl";
        case PolicyKind::bc: return "bc";
        case PolicyKind::dagger: return "dagger";
        case PolicyKind::rl_gd: return "rl+gd";
        case PolicyKind::dagger_gd: return "dagger+gd";
    }
    return "?";
}

inline PolicyKind parse_policy_kind(std::string_view s) {
    for (auto k : {PolicyKind::gd, PolicyKind::gd16, PolicyKind::gd32, PolicyKind::rl, PolicyKind::bc,
                   PolicyKind::dagger, PolicyKind::rl_gd, PolicyKind::dagger_gd})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown policy '" + std::string(s) + "'");
}

/// Whether the kind runs a trained network (and so needs a model).
inline bool needs_model(PolicyKind k) {
    return k != PolicyKind::gd && k != PolicyKind::gd16 && k != PolicyKind::gd32;
}

/// One evaluable policy: the kind, its network if learned, and step counts.
struct PolicyRunner {
    PolicyKind kind = PolicyKind::gd;
    std::string name;  // report label
    std::shared_ptr<const PolicyNet> net;
    GdConfig gd;             // gd.steps is T for the GD variants
    int learned_steps = 10;  // T of the network policy
    int hybrid_gd_steps = 10;

    /// Final state of one episode from s0 towards the target image.
    [[nodiscard]] PoseState run(const GeneratorSpec& spec, const PoseState& s0, const Image& target) const {
        switch (kind) {
            case PolicyKind::gd: return gd_rollout(spec, s0, target, gd).final_state();
            case PolicyKind::gd16: return multi_start_gd(spec, target, 16, gd, s0).best;
            case PolicyKind::gd32: return multi_start_gd(spec, target, 32, gd, s0).best;
            case PolicyKind::rl:
            case PolicyKind::bc:
            case PolicyKind::dagger: {
                NetPolicy p(net);
                return rollout(p, spec, s0, target, {learned_steps, false}).final_state();
            }
            case PolicyKind::rl_gd:
            case PolicyKind::dagger_gd: {
                NetPolicy p(net);
                return hybrid_rollout(p, spec, s0, target, learned_steps, hybrid_gd_steps, gd).final_state();
            }
        }
        throw std::logic_error("unhandled policy kind");
    }
};

/// Runner with the evaluation defaults: GD at T = 50, BC single-step, the
/// other learned policies at T = 10, hybrids 10 learned + 10 GD steps.
inline PolicyRunner make_runner(PolicyKind kind, std::shared_ptr<const PolicyNet> net = nullptr, GdConfig gd = {}) {
    if (needs_model(kind) && !net) throw std::invalid_argument("policy '" + std::string(to_string(kind)) + "' needs a model");
    PolicyRunner r;
    r.kind = kind;
    r.name = std::string(to_string(kind));
    r.net = std::move(net);
    r.gd = gd;
    r.learned_steps = kind == PolicyKind::bc ? 1 : 10;
    return r;
}

// ---------------------------------------------------------------------------
// Episodes and evaluation

struct Episode {
    PoseState goal;
    PoseState start;
};

/// n goals from sample_state, each started at the mean pose.
inline std::vector<Episode> heldout_episodes(std::size_t n, std::uint64_t seed, const SamplingRanges& ranges = {}) {
    std::mt19937_64 rng(seed);
    std::vector<Episode> eps(n);
    for (auto& e : eps) {
        e.goal = sample_state(rng, ranges);
        e.start = mean_pose(ranges);
    }
    return eps;
}

/// n goals from sample_state, each started at the goal rotated by `offset_deg`
/// in azimuth, same translation, z = 0. The goals depend only on the seed.
inline std::vector<Episode> offset_episodes(double offset_deg, std::size_t n, std::uint64_t seed,
                                            const SamplingRanges& ranges = {}) {
    std::mt19937_64 rng(seed);
    std::vector<Episode> eps(n);
    for (auto& e : eps) {
        e.goal = sample_state(rng, ranges);
        e.start = e.goal;
        e.start.z = LatentCode();
        e.start.theta = EulerPose(wrap_angle(e.goal.theta.azimuth + rad(offset_deg)), e.goal.theta.elevation,
                                  e.goal.theta.inplane);
    }
    return eps;
}

/// Calls fn(i) for i in [0, n) on up to `threads` threads. Results must be
/// written by index so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n && !failed; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

struct EpisodeOutcome {
    double rotation = 0.0;     // radians
    double translation = 0.0;  // normalized units
    double seconds = 0.0;
};

struct EvalReport {
    std::string policy;
    std::uint64_t seed = 0;
    std::vector<EpisodeOutcome> episodes;

    [[nodiscard]] std::vector<double> rotation_deg() const {
        std::vector<double> v;
        for (const auto& e : episodes) v.push_back(deg(e.rotation));
        return v;
    }
    [[nodiscard]] std::vector<double> translation() const {
        std::vector<double> v;
        for (const auto& e : episodes) v.push_back(e.translation);
        return v;
    }
    [[nodiscard]] double ap_rotation(double threshold_deg) const { return compute_ap(rotation_deg(), threshold_deg); }
    [[nodiscard]] double ap_translation(double threshold) const { return compute_ap(translation(), threshold); }
};

/// Runs every episode. When a disturbance is given it is applied to the target
/// image only, with a per-episode generator seeded from (seed, index).
inline EvalReport evaluate(const PolicyRunner& runner, const GeneratorSpec& spec, const std::vector<Episode>& episodes,
                           std::uint64_t seed, std::size_t threads = 1,
                           const std::optional<Disturbance>& disturbance = std::nullopt) {
    EvalReport rep;
    rep.policy = runner.name;
    rep.seed = seed;
    rep.episodes.resize(episodes.size());
    parallel_for(episodes.size(), threads, [&](std::size_t i) {
        const Episode& ep = episodes[i];
        Image target = render(spec, ep.goal);
        if (disturbance) {
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(i)};
            std::mt19937_64 rng(seq);
            target = apply_disturbance(target, *disturbance, rng, spec.background);
        }
        const auto t0 = std::chrono::steady_clock::now();
        const PoseState fin = runner.run(spec, ep.start, target);
        const auto t1 = std::chrono::steady_clock::now();
        const EpisodeError err = episode_error(fin, ep.goal, spec.symmetry_axis);
        rep.episodes[i] = {err.rotation, err.translation, std::chrono::duration<double>(t1 - t0).count()};
    });
    return rep;
}

// ---------------------------------------------------------------------------
// Report rows

struct ReportRow {
    std::string policy;
    std::string condition;
    std::string metric;
    double value = 0.0;
    std::size_t seed_count = 1;
    double stddev = 0.0;
};

inline std::string rotation_metric(double threshold_deg) { return "rotation_ap@" + csv::number(threshold_deg); }
inline std::string translation_metric(double threshold) { return "translation_ap@" + csv::number(threshold); }

/// AP rows for every threshold plus the median rotation error in degrees.
inline std::vector<ReportRow> report_rows(const EvalReport& rep, const std::string& condition, const Thresholds& th = {}) {
    std::vector<ReportRow> rows;
    for (double t : th.rotation_deg) rows.push_back({rep.policy, condition, rotation_metric(t), rep.ap_rotation(t)});
    for (double t : th.translation) rows.push_back({rep.policy, condition, translation_metric(t), rep.ap_translation(t)});
    rows.push_back({rep.policy, condition, "rotation_median_deg", median(rep.rotation_deg())});
    return rows;
}

/// Merges per-seed row sets with identical layout into medians with sample
/// standard deviations.
inline std::vector<ReportRow> aggregate_seeds(const std::vector<std::vector<ReportRow>>& per_seed) {
    if (per_seed.empty()) return {};
    std::vector<ReportRow> out = per_seed.front();
    for (std::size_t r = 0; r < out.size(); ++r) {
        std::vector<double> vals;
        for (const auto& rows : per_seed) {
            if (rows.size() != out.size() || rows[r].metric != out[r].metric || rows[r].condition != out[r].condition ||
                rows[r].policy != out[r].policy)
                throw std::invalid_argument("aggregate_seeds: row layouts differ between seeds");
            vals.push_back(rows[r].value);
        }
        out[r].value = median(vals);
        out[r].seed_count = vals.size();
        out[r].stddev = stddev(vals);
    }
    return out;
}

inline void write_report(std::ostream& os, const std::vector<ReportRow>& rows) {
    csv::write_row(os, {"policy", "condition", "metric", "value", "seed_count", "stddev"});
    for (const auto& r : rows)
        csv::write_row(os, {r.policy, r.condition, r.metric, csv::number(r.value), csv::number(r.seed_count),
                            csv::number(r.stddev)});
}

// ---------------------------------------------------------------------------
// Suites

struct SweepBin {
    double offset_deg = 0.0;
    EvalReport report;
};

inline std::vector<double> default_sweep_angles() {
    std::vector<double> a;
    for (int k = 1; k <= 18; ++k) a.push_back(10.0 * k);
    return a;
}

/// Azimuth initialization sweep: one bin per offset, the same goals in every bin.
inline std::vector<SweepBin> init_sweep(const PolicyRunner& runner, const GeneratorSpec& spec,
                                        const std::vector<double>& angles_deg, std::size_t episodes_per_angle,
                                        std::uint64_t seed, std::size_t threads = 1, const SamplingRanges& ranges = {}) {
    std::vector<SweepBin> bins;
    for (double a : angles_deg)
        bins.push_back({a, evaluate(runner, spec, offset_episodes(a, episodes_per_angle, seed, ranges), seed, threads)});
    return bins;
}

inline std::vector<ReportRow> sweep_rows(const std::vector<SweepBin>& bins, const Thresholds& th = {}) {
    std::vector<ReportRow> rows;
    for (const auto& b : bins) {
        const std::string cond = "azimuth_offset=" + csv::number(b.offset_deg);
        for (double t : th.rotation_deg) rows.push_back({b.report.policy, cond, rotation_metric(t), b.report.ap_rotation(t)});
    }
    return rows;
}

/// Every runner on the same held-out episodes, clean and under each disturbance.
inline std::vector<ReportRow> robustness_suite(const std::vector<PolicyRunner>& runners, const GeneratorSpec& spec,
                                               const std::vector<Disturbance>& grid, std::size_t n, std::uint64_t seed,
                                               std::size_t threads = 1, const Thresholds& th = {},
                                               const SamplingRanges& ranges = {}) {
    const auto eps = heldout_episodes(n, seed, ranges);
    std::vector<ReportRow> rows;
    for (const auto& r : runners) {
        auto clean = report_rows(evaluate(r, spec, eps, seed, threads), "clean", th);
        rows.insert(rows.end(), clean.begin(), clean.end());
        for (const auto& d : grid) {
            auto dist = report_rows(evaluate(r, spec, eps, seed, threads, d), d.label(), th);
            rows.insert(rows.end(), dist.begin(), dist.end());
        }
    }
    return rows;
}

struct TimingResult {
    std::string policy;
    double mean_seconds = 0.0;
    std::size_t images = 0;
};

inline constexpr std::size_t kTimingWarmup = 3;

/// Mean single-threaded wall time per target image; the first kTimingWarmup
/// images of each policy are run but not counted.
inline std::vector<TimingResult> timing_suite(const std::vector<PolicyRunner>& runners, const GeneratorSpec& spec,
                                              std::size_t n_images, std::uint64_t seed,
                                              const SamplingRanges& ranges = {}) {
    if (n_images < 10) throw std::invalid_argument("timing_suite: n_images must be >= 10");
    const auto eps = heldout_episodes(n_images + kTimingWarmup, seed, ranges);
    std::vector<TimingResult> out;
    for (const auto& r : runners) {
        const EvalReport rep = evaluate(r, spec, eps, seed, 1);
        double total = 0.0;
        for (std::size_t i = kTimingWarmup; i < rep.episodes.size(); ++i) total += rep.episodes[i].seconds;
        out.push_back({r.name, total / static_cast<double>(n_images), n_images});
    }
    return out;
}

inline std::vector<ReportRow> timing_rows(const std::vector<TimingResult>& t) {
    std::vector<ReportRow> rows;
    for (const auto& r : t) rows.push_back({r.policy, "timing", "mean_seconds", r.mean_seconds});
    return rows;
}

// ---------------------------------------------------------------------------
// Loss landscape

/// L_p against the goal's rendering over an azimuth x elevation grid. Azimuth
/// runs over the full turn starting at the goal; elevation spans +-el_span_deg
/// around the goal in el_steps rows (odd, so the middle row holds the goal).
struct Landscape {
    std::size_t az_steps = 0;
    std::size_t el_steps = 0;
    std::vector<double> azimuth;    // radians, row-major [el][az]
    std::vector<double> elevation;  // radians
    std::vector<double> loss;

    /// Losses of the goal's elevation row, indexed by azimuth offset step.
    [[nodiscard]] std::vector<double> center_row() const {
        const std::size_t e = el_steps / 2;
        return {loss.begin() + static_cast<std::ptrdiff_t>(e * az_steps),
                loss.begin() + static_cast<std::ptrdiff_t>((e + 1) * az_steps)};
    }
};

inline Landscape loss_landscape(const GeneratorSpec& spec, const PoseState& goal, std::size_t az_steps,
                                std::size_t el_steps, double el_span_deg, std::size_t threads = 1) {
    if (az_steps < 2) throw std::invalid_argument("loss_landscape: az_steps must be >= 2");
    if (el_steps < 1 || el_steps % 2 == 0) throw std::invalid_argument("loss_landscape: el_steps must be odd");
    if (!(el_span_deg >= 0.0 && el_span_deg <= 90.0)) throw std::invalid_argument("loss_landscape: el_span must lie in [0, 90]");
    const Image target = render(spec, goal);
    Landscape l{az_steps, el_steps, {}, {}, {}};
    const std::size_t n = az_steps * el_steps;
    l.azimuth.resize(n);
    l.elevation.resize(n);
    l.loss.resize(n);
    const double half = static_cast<double>(el_steps / 2);
    for (std::size_t e = 0; e < el_steps; ++e)
        for (std::size_t a = 0; a < az_steps; ++a) {
            const std::size_t i = e * az_steps + a;
            const double off = half == 0.0 ? 0.0 : el_span_deg * (static_cast<double>(e) - half) / half;
            l.azimuth[i] = wrap_angle(goal.theta.azimuth + 2.0 * kPi * static_cast<double>(a) / static_cast<double>(az_steps));
            l.elevation[i] = goal.theta.elevation + rad(off);
        }
    parallel_for(n, threads, [&](std::size_t i) {
        PoseState s = goal;
        s.theta = EulerPose(l.azimuth[i], l.elevation[i], goal.theta.inplane);
        l.loss[i] = perceptual_loss(render(spec, s), target);
    });
    return l;
}

/// Indices of strict local minima of a cyclic sequence.
inline std::vector<std::size_t> cyclic_local_minima(const std::vector<double>& v) {
    std::vector<std::size_t> out;
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < n && n >= 3; ++i)
        if (v[i] < v[(i + n - 1) % n] && v[i] < v[(i + 1) % n]) out.push_back(i);
    return out;
}

}  // namespace pnav
