#pragma once

// Run configuration: flat INI sections of `key = value`. Every key has a
// default and a one-line description; unknown sections and keys are errors.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "pnav/eval.hpp"
#include "pnav/il.hpp"
#include "pnav/policy.hpp"
#include "pnav/rl.hpp"

namespace pnav {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EvalSettings {
    std::size_t episodes = 100;           // held-out episodes per evaluation
    std::size_t episodes_per_angle = 50;  // init sweep
    std::size_t timing_images = 20;
    std::size_t seeds = 1;                // evaluation seeds: seed, seed + 1, ...
    std::string model;                    // weight file for learned policies
};

struct RunConfig {
    std::string category = "car";
    std::uint64_t seed = 1;
    PolicyKind policy = PolicyKind::gd;
    std::string out = "out";
    std::size_t threads = 1;
    LossWeights weights;
    GdConfig gd;
    IlConfig il;
    SacConfig rl;
    EvalSettings eval;
};

namespace detail {

template <class T>
T parse_value(std::string_view text) {
    static_assert(std::is_integral_v<T>);
    T v{};
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size())
        throw ConfigError("expected an integer, got '" + std::string(text) + "'");
    return v;
}

template <>
inline std::string parse_value<std::string>(std::string_view text) { return std::string(text); }

template <>
inline bool parse_value<bool>(std::string_view text) {
    if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "off" || text == "no") return false;
    throw ConfigError("expected a boolean, got '" + std::string(text) + "'");
}

template <>
inline double parse_value<double>(std::string_view text) {
    double v = 0.0;
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size() || !std::isfinite(v))
        throw ConfigError("expected a number, got '" + std::string(text) + "'");
    return v;
}

template <>
inline PolicyKind parse_value<PolicyKind>(std::string_view text) {
    try {
        return parse_policy_kind(text);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

template <>
inline StartMode parse_value<StartMode>(std::string_view text) {
    try {
        return parse_start_mode(text);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

inline std::string show(const std::string& v) { return v; }
inline std::string show(bool v) { return v ? "true" : "false"; }
inline std::string show(double v) { return csv::number(v); }
template <class T>
    requires std::is_integral_v<T>
std::string show(T v) {
    return std::to_string(v);
}
inline std::string show(PolicyKind v) { return std::string(to_string(v)); }
inline std::string show(StartMode v) { return std::string(to_string(v)); }

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// One documented configuration key.
struct ConfigField {
    std::string section;
    std::string key;
    std::string doc;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

namespace detail {

template <class T, class Access>
ConfigField field(std::string section, std::string key, std::string doc, Access access) {
    return {std::move(section), std::move(key), std::move(doc),
            [access](RunConfig& c, std::string_view v) { access(c) = parse_value<T>(v); },
            [access](const RunConfig& c) { return show(access(const_cast<RunConfig&>(c))); }};
}

}  // namespace detail

/// Schema of every key, in file order.
inline const std::vector<ConfigField>& config_schema() {
    using detail::field;
    using sz = std::size_t;
    static const std::vector<ConfigField> schema = {
        field<std::string>("run", "category", "generator category: car, box or bottle", [](RunConfig& c) -> auto& { return c.category; }),
        field<std::uint64_t>("run", "seed", "master seed", [](RunConfig& c) -> auto& { return c.seed; }),
        field<PolicyKind>("run", "policy", "gd, gd16, gd32, rl, bc, dagger, rl+gd or dagger+gd", [](RunConfig& c) -> auto& { return c.policy; }),
        field<std::string>("run", "out", "output directory", [](RunConfig& c) -> auto& { return c.out; }),
        field<sz>("run", "threads", "evaluation threads (training is single-threaded)", [](RunConfig& c) -> auto& { return c.threads; }),

        field<double>("loss", "lambda1", "rotation (quaternion) weight", [](RunConfig& c) -> auto& { return c.weights.lambda1; }),
        field<double>("loss", "lambda2", "translation weight", [](RunConfig& c) -> auto& { return c.weights.lambda2; }),
        field<double>("loss", "lambda3", "latent weight", [](RunConfig& c) -> auto& { return c.weights.lambda3; }),

        field<double>("gd", "lr", "Adam learning rate on the state", [](RunConfig& c) -> auto& { return c.gd.lr; }),
        field<int>("gd", "steps", "optimisation steps T per start", [](RunConfig& c) -> auto& { return c.gd.steps; }),
        field<double>("gd", "beta1", "Adam beta1", [](RunConfig& c) -> auto& { return c.gd.beta1; }),
        field<double>("gd", "beta2", "Adam beta2", [](RunConfig& c) -> auto& { return c.gd.beta2; }),
        field<double>("gd", "eps", "Adam epsilon", [](RunConfig& c) -> auto& { return c.gd.eps; }),

        field<sz>("il", "demos", "initial behaviour-cloning pairs", [](RunConfig& c) -> auto& { return c.il.demos; }),
        field<int>("il", "epochs", "epochs on the initial set (and per round when from_scratch)", [](RunConfig& c) -> auto& { return c.il.epochs; }),
        field<sz>("il", "batch", "minibatch size", [](RunConfig& c) -> auto& { return c.il.batch; }),
        field<double>("il", "lr", "Adam learning rate", [](RunConfig& c) -> auto& { return c.il.lr; }),
        field<sz>("il", "hidden", "hidden width of the policy network", [](RunConfig& c) -> auto& { return c.il.hidden; }),
        field<int>("il", "dagger_rounds", "DAgger aggregation rounds (dagger only)", [](RunConfig& c) -> auto& { return c.il.dagger_rounds; }),
        field<sz>("il", "rollouts_per_round", "on-policy episodes collected per round", [](RunConfig& c) -> auto& { return c.il.rollouts_per_round; }),
        field<int>("il", "rollout_steps", "steps per collected episode", [](RunConfig& c) -> auto& { return c.il.rollout_steps; }),
        field<int>("il", "finetune_epochs", "epochs per round when fine-tuning", [](RunConfig& c) -> auto& { return c.il.finetune_epochs; }),
        field<bool>("il", "from_scratch", "retrain a fresh network each round", [](RunConfig& c) -> auto& { return c.il.from_scratch; }),
        field<int>("il", "inference_steps", "evaluation steps of the learned policy; 0 = 1 for bc, rollout_steps otherwise", [](RunConfig& c) -> auto& { return c.il.inference_steps; }),
        field<bool>("il", "use_latent_loss", "include the latent term in the loss", [](RunConfig& c) -> auto& { return c.il.use_latent_loss; }),
        field<StartMode>("il", "start", "episode starts: random, mean_pose, azimuth_offset or mixed", [](RunConfig& c) -> auto& { return c.il.start; }),

        field<double>("rl", "gamma", "discount", [](RunConfig& c) -> auto& { return c.rl.gamma; }),
        field<double>("rl", "tau", "target-network soft update rate", [](RunConfig& c) -> auto& { return c.rl.tau; }),
        field<sz>("rl", "batch", "replay minibatch size", [](RunConfig& c) -> auto& { return c.rl.batch; }),
        field<double>("rl", "actor_lr", "actor learning rate", [](RunConfig& c) -> auto& { return c.rl.actor_lr; }),
        field<double>("rl", "critic_lr", "critic learning rate", [](RunConfig& c) -> auto& { return c.rl.critic_lr; }),
        field<double>("rl", "alpha_lr", "temperature learning rate", [](RunConfig& c) -> auto& { return c.rl.alpha_lr; }),
        field<double>("rl", "init_log_alpha", "initial log temperature", [](RunConfig& c) -> auto& { return c.rl.init_log_alpha; }),
        field<double>("rl", "target_entropy", "entropy target", [](RunConfig& c) -> auto& { return c.rl.target_entropy; }),
        field<int>("rl", "steps_per_episode", "episode length T", [](RunConfig& c) -> auto& { return c.rl.steps_per_episode; }),
        field<int>("rl", "episodes", "training episodes", [](RunConfig& c) -> auto& { return c.rl.episodes; }),
        field<sz>("rl", "capacity", "replay buffer capacity", [](RunConfig& c) -> auto& { return c.rl.capacity; }),
        field<sz>("rl", "hidden", "hidden width of actor and critics", [](RunConfig& c) -> auto& { return c.rl.hidden; }),
        field<bool>("rl", "relabel", "hindsight-relabel failed episodes", [](RunConfig& c) -> auto& { return c.rl.relabel; }),
        field<double>("rl", "relabel_threshold_deg", "final rotation error that counts as failure", [](RunConfig& c) -> auto& { return c.rl.relabel_threshold_deg; }),
        field<int>("rl", "expert_inject_every", "episodes between expert injections (0 = never)", [](RunConfig& c) -> auto& { return c.rl.expert_inject_every; }),
        field<sz>("rl", "expert_inject_count", "expert transitions per injection", [](RunConfig& c) -> auto& { return c.rl.expert_inject_count; }),
        field<int>("rl", "eval_every", "episodes between held-out evaluations (0 = never)", [](RunConfig& c) -> auto& { return c.rl.eval_every; }),
        field<sz>("rl", "eval_episodes", "episodes per held-out evaluation", [](RunConfig& c) -> auto& { return c.rl.eval_episodes; }),
        field<StartMode>("rl", "start", "episode starts: random, mean_pose, azimuth_offset or mixed", [](RunConfig& c) -> auto& { return c.rl.start; }),

        field<sz>("eval", "episodes", "held-out episodes per evaluation", [](RunConfig& c) -> auto& { return c.eval.episodes; }),
        field<sz>("eval", "episodes_per_angle", "episodes per azimuth bin of the sweep", [](RunConfig& c) -> auto& { return c.eval.episodes_per_angle; }),
        field<sz>("eval", "timing_images", "timed images per policy (after 3 warm-up images)", [](RunConfig& c) -> auto& { return c.eval.timing_images; }),
        field<sz>("eval", "seeds", "evaluation seeds seed, seed + 1, ...", [](RunConfig& c) -> auto& { return c.eval.seeds; }),
        field<std::string>("eval", "model", "weight file for learned policies", [](RunConfig& c) -> auto& { return c.eval.model; }),
    };
    return schema;
}

/// Copies the shared loss weights into the IL and RL sections and checks ranges.
inline void finalize(RunConfig& c) {
    c.il.weights = c.weights;
    c.rl.weights = c.weights;
    if (c.category != "car" && c.category != "box" && c.category != "bottle")
        throw ConfigError("run.category must be car, box or bottle, got '" + c.category + "'");
    if (c.threads < 1) throw ConfigError("run.threads must be >= 1");
    if (c.gd.steps < 0) throw ConfigError("gd.steps must be >= 0");
    if (!(c.gd.lr > 0.0)) throw ConfigError("gd.lr must be > 0");
    if (c.il.dagger_rounds < 0) throw ConfigError("il.dagger_rounds must be >= 0");
    if (c.il.demos < 1 || c.il.batch < 1 || c.il.hidden < 1) throw ConfigError("il.demos, il.batch and il.hidden must be >= 1");
    if (c.il.inference_steps < 0 || c.il.rollout_steps < 1) throw ConfigError("il.inference_steps must be >= 0 and il.rollout_steps >= 1");
    if (!(c.rl.tau > 0.0 && c.rl.tau <= 1.0)) throw ConfigError("rl.tau must lie in (0, 1]");
    if (c.rl.batch < 1 || c.rl.capacity < c.rl.batch) throw ConfigError("rl.capacity must be >= rl.batch >= 1");
    if (c.eval.episodes < 1 || c.eval.episodes_per_angle < 1 || c.eval.seeds < 1)
        throw ConfigError("eval counts must be >= 1");
    if (c.eval.timing_images < 10) throw ConfigError("eval.timing_images must be >= 10");
}

/// Parses INI text over the defaults. `origin` names the source in messages.
inline RunConfig parse_config(std::string_view text, const std::string& origin = "<config>") {
    RunConfig cfg;
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no) + ": ";
        std::string_view line = detail::trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "malformed section header");
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            const auto& s = config_schema();
            if (std::none_of(s.begin(), s.end(), [&](const ConfigField& f) { return f.section == section; }))
                throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside of a section");
        const std::string key(detail::trim(line.substr(0, eq)));
        const std::string_view value = detail::trim(line.substr(eq + 1));
        const auto& s = config_schema();
        const auto it = std::find_if(s.begin(), s.end(), [&](const ConfigField& f) { return f.section == section && f.key == key; });
        if (it == s.end()) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
        try {
            it->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + section + "." + key + ": " + e.what());
        }
    }
    finalize(cfg);
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path.string());
}

/// The resolved configuration as INI text; parse_config(to_ini(c)) reproduces c.
inline std::string to_ini(const RunConfig& c, bool with_docs = false) {
    std::string out, section;
    for (const auto& f : config_schema()) {
        if (f.section != section) {
            if (!section.empty()) out += '\n';
            section = f.section;
            out += "[" + section + "]\n";
        }
        if (with_docs) out += "# " + f.doc + "\n";
        out += f.key + " = " + f.get(c) + "\n";
    }
    return out;
}

}  // namespace pnav
