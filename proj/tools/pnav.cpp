// pnav: train, evaluate and inspect pose-navigation policies on the toy generator.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
// 3 numerical failure (non-finite values during training or evaluation).

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pnav/config.hpp"
#include "pnav/csv.hpp"
#include "pnav/eval.hpp"
#include "pnav/il.hpp"
#include "pnav/rl.hpp"
#include "pnav/state_text.hpp"

#ifndef PNAV_VERSION_STRING
#define PNAV_VERSION_STRING "unknown"
#endif

namespace fs = std::filesystem;
using namespace pnav;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> threads;
    std::vector<std::string> policies;
    std::string suite = "clean";
    std::string model;
    std::string state = "mean";
    std::string from = "mean";
    int steps = 10;
    std::size_t az_steps = 72;
    std::size_t el_steps = 13;
    double el_span = 60.0;
};

PolicyKind parse_kind(const std::string& s) {
    try {
        return parse_policy_kind(s);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

PoseState parse_state_arg(const std::string& s) {
    try {
        return parse_state(s);
    } catch (const StateParseError& e) {
        throw UsageError(e.what());
    }
}

RunConfig resolve(const Options& o) {
    RunConfig c = o.config_path.empty() ? parse_config("") : load_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.out) c.out = *o.out;
    if (o.threads) c.threads = *o.threads;
    if (!o.policies.empty()) c.policy = parse_kind(o.policies.front());
    if (!o.model.empty()) c.eval.model = o.model;
    finalize(c);
    return c;
}

/// Records the command, resolved configuration and outputs next to the outputs.
class Manifest {
public:
    Manifest(std::string command, const RunConfig& cfg, const std::vector<std::string>& argv) {
        j_["version"] = PNAV_VERSION_STRING;
        j_["command"] = std::move(command);
        j_["argv"] = argv;
        j_["config"] = to_ini(cfg);
        j_["outputs"] = nlohmann::ordered_json::array();
    }
    void output(const fs::path& p) { j_["outputs"].push_back(p.filename().string()); }
    void set(const std::string& key, nlohmann::ordered_json v) { j_[key] = std::move(v); }
    void write(const fs::path& dir) const {
        std::ofstream os(dir / "manifest.json", std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
        os << j_.dump(2) << '\n';
    }

private:
    nlohmann::ordered_json j_;
};

fs::path prepare_out(const RunConfig& cfg) {
    const fs::path dir = cfg.out;
    fs::create_directories(dir);
    return dir;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    return os;
}

std::shared_ptr<const PolicyNet> load_model(const RunConfig& cfg) {
    if (cfg.eval.model.empty()) throw UsageError("policy '" + std::string(to_string(cfg.policy)) + "' needs --model");
    if (!fs::exists(cfg.eval.model)) throw UsageError("model file not found: " + cfg.eval.model);
    return std::make_shared<const PolicyNet>(PolicyNet::load(cfg.eval.model));
}

int learned_steps(const RunConfig& cfg, PolicyKind k) {
    if (cfg.il.inference_steps > 0 && (k == PolicyKind::bc || k == PolicyKind::dagger || k == PolicyKind::dagger_gd))
        return cfg.il.inference_steps;
    if (k == PolicyKind::bc) return 1;
    if (k == PolicyKind::rl || k == PolicyKind::rl_gd) return cfg.rl.steps_per_episode;
    return cfg.il.rollout_steps;
}

PolicyRunner runner_for(const RunConfig& cfg, PolicyKind k, const std::shared_ptr<const PolicyNet>& net) {
    PolicyRunner r = make_runner(k, needs_model(k) ? net : nullptr, cfg.gd);
    r.learned_steps = learned_steps(cfg, k);
    return r;
}

// ---------------------------------------------------------------------------

int cmd_train(const Options&, const RunConfig& cfg, const std::vector<std::string>& argv) {
    const GeneratorSpec spec = make_generator(cfg.category);
    const fs::path dir = prepare_out(cfg);
    Manifest m("train", cfg, argv);
    const fs::path model = dir / "model.pnw", log = dir / "train_log.csv";
    if (cfg.policy == PolicyKind::bc || cfg.policy == PolicyKind::dagger) {
        const IlResult r = cfg.policy == PolicyKind::bc ? train_bc(spec, cfg.il, cfg.seed) : train_dagger(spec, cfg.il, cfg.seed);
        r.net.save(model);
        auto os = open_out(log);
        csv::write_row(os, {"round", "epoch", "dataset_size", "mean_loss"});
        for (const auto& row : r.log)
            csv::write_row(os, {csv::number(row.round), csv::number(row.epoch), csv::number(row.dataset_size),
                                csv::number(row.mean_loss)});
        m.set("dataset_size", r.dataset_size);
    } else if (cfg.policy == PolicyKind::rl) {
        const RlResult r = train_rl(spec, cfg.rl, cfg.seed);
        r.agent.actor.save(model);
        auto os = open_out(log);
        csv::write_row(os, {"episode", "mean_reward", "critic_loss", "actor_loss", "alpha", "eval_rot_err_median"});
        for (const auto& row : r.log)
            csv::write_row(os, {csv::number(row.episode), csv::number(row.mean_reward), csv::number(row.critic_loss),
                                csv::number(row.actor_loss), csv::number(row.alpha),
                                row.eval_rot_err_median ? csv::number(*row.eval_rot_err_median) : ""});
    } else {
        throw UsageError("train supports --policy bc, dagger or rl");
    }
    m.output(model);
    m.output(log);
    m.write(dir);
    std::cout << "wrote " << model.string() << "\n";
    return 0;
}

std::vector<ReportRow> ablation(const RunConfig& cfg, const GeneratorSpec& spec) {
    std::vector<std::vector<ReportRow>> per_seed;
    for (std::size_t k = 0; k < cfg.eval.seeds; ++k) {
        const std::uint64_t seed = cfg.seed + k;
        PolicyNet bc;
        const IlResult da = train_dagger(spec, cfg.il, seed, nullptr, &bc);
        IlConfig nolat = cfg.il;
        nolat.use_latent_loss = false;
        const IlResult bc_nolat = train_bc(spec, nolat, seed);
        const auto eps = heldout_episodes(cfg.eval.episodes, seed, cfg.il.ranges);
        std::vector<ReportRow> rows;
        auto add = [&](const std::string& name, const PolicyNet& net, int steps, const std::string& cond) {
            PolicyRunner r = make_runner(PolicyKind::dagger, std::make_shared<const PolicyNet>(net));
            r.name = name;
            r.learned_steps = steps;
            const auto rr = report_rows(evaluate(r, spec, eps, seed, cfg.threads), cond);
            rows.insert(rows.end(), rr.begin(), rr.end());
        };
        const int t = cfg.il.rollout_steps;
        add("bc", bc, 1, "steps=1");
        add("bc", bc, t, "steps=" + std::to_string(t));
        add("dagger", da.net, 1, "steps=1");
        add("dagger", da.net, t, "steps=" + std::to_string(t));
        add("bc-no-latent-loss", bc_nolat.net, 1, "steps=1");
        per_seed.push_back(std::move(rows));
    }
    return aggregate_seeds(per_seed);
}

int cmd_eval(const Options& o, const RunConfig& cfg, const std::vector<std::string>& argv) {
    const GeneratorSpec spec = make_generator(cfg.category);
    std::vector<PolicyKind> kinds;
    for (const auto& p : o.policies) kinds.push_back(parse_kind(p));
    if (kinds.empty()) kinds.push_back(cfg.policy);
    std::shared_ptr<const PolicyNet> net;
    const bool any_learned = std::any_of(kinds.begin(), kinds.end(), needs_model);
    if (o.suite != "ablation" && any_learned) net = load_model(cfg);

    std::vector<ReportRow> rows;
    if (o.suite == "clean" || o.suite == "sweep") {
        for (auto k : kinds) {
            const PolicyRunner r = runner_for(cfg, k, net);
            std::vector<std::vector<ReportRow>> per_seed;
            for (std::size_t s = 0; s < cfg.eval.seeds; ++s) {
                const std::uint64_t seed = cfg.seed + s;
                if (o.suite == "clean")
                    per_seed.push_back(report_rows(evaluate(r, spec, heldout_episodes(cfg.eval.episodes, seed), seed, cfg.threads), "clean"));
                else
                    per_seed.push_back(sweep_rows(init_sweep(r, spec, default_sweep_angles(), cfg.eval.episodes_per_angle, seed, cfg.threads)));
            }
            const auto agg = aggregate_seeds(per_seed);
            rows.insert(rows.end(), agg.begin(), agg.end());
        }
    } else if (o.suite == "robustness") {
        std::vector<PolicyRunner> runners;
        for (auto k : kinds) runners.push_back(runner_for(cfg, k, net));
        std::vector<std::vector<ReportRow>> per_seed;
        for (std::size_t s = 0; s < cfg.eval.seeds; ++s)
            per_seed.push_back(robustness_suite(runners, spec, default_disturbance_grid(), cfg.eval.episodes, cfg.seed + s, cfg.threads));
        rows = aggregate_seeds(per_seed);
    } else if (o.suite == "timing") {
        std::vector<PolicyRunner> runners;
        for (auto k : {PolicyKind::gd, PolicyKind::gd16, PolicyKind::gd32}) runners.push_back(runner_for(cfg, k, nullptr));
        for (auto k : kinds)
            if (needs_model(k)) runners.push_back(runner_for(cfg, k, net));
        rows = timing_rows(timing_suite(runners, spec, cfg.eval.timing_images, cfg.seed));
    } else if (o.suite == "ablation") {
        rows = ablation(cfg, spec);
    } else {
        throw UsageError("unknown suite '" + o.suite + "' (expected clean, sweep, robustness, timing or ablation)");
    }

    const fs::path dir = prepare_out(cfg);
    const fs::path report = dir / ("report_" + o.suite + ".csv");
    {
        auto os = open_out(report);
        write_report(os, rows);
    }
    Manifest m("eval", cfg, argv);
    m.set("suite", o.suite);
    m.output(report);
    m.write(dir);
    std::cout << "wrote " << report.string() << " (" << rows.size() << " rows)\n";
    return 0;
}

int cmd_render(const Options& o, const RunConfig& cfg, const std::vector<std::string>& argv) {
    const GeneratorSpec spec = make_generator(cfg.category);
    const PoseState goal = parse_state_arg(o.state);
    const PoseState start = parse_state_arg(o.from);
    if (o.steps < 0) throw UsageError("--steps must be >= 0");
    const PolicyKind k = cfg.policy;
    if (k == PolicyKind::gd16 || k == PolicyKind::gd32) throw UsageError("render needs a single-trajectory policy");
    const Image target = render(spec, goal);
    Trajectory tr;
    if (k == PolicyKind::gd) {
        GdConfig g = cfg.gd;
        g.steps = o.steps;
        tr = gd_rollout(spec, start, target, g, true);
    } else {
        const auto net = load_model(cfg);
        NetPolicy p(net);
        if (k == PolicyKind::rl_gd || k == PolicyKind::dagger_gd)
            tr = hybrid_rollout(p, spec, start, target, o.steps, 10, cfg.gd, true);
        else
            tr = rollout(p, spec, start, target, {o.steps, true});
    }
    const fs::path dir = prepare_out(cfg);
    Manifest m("render", cfg, argv);
    write_ppm(dir / "target.ppm", target);
    m.output(dir / "target.ppm");
    for (std::size_t i = 0; i < tr.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03zu.ppm", i);
        write_ppm(dir / name, tr.images[i]);
        m.output(dir / name);
    }
    const EpisodeError err = episode_error(tr.final_state(), goal, spec.symmetry_axis);
    m.set("final_state", format_state(tr.final_state()));
    m.set("rotation_error_deg", deg(err.rotation));
    m.write(dir);
    std::cout << "wrote " << tr.images.size() << " frames to " << dir.string() << "; final rotation error "
              << deg(err.rotation) << " deg\n";
    return 0;
}

int cmd_landscape(const Options& o, const RunConfig& cfg, const std::vector<std::string>& argv) {
    if (o.az_steps < 2) throw UsageError("--az-steps must be >= 2");
    if (o.el_steps < 1 || o.el_steps % 2 == 0) throw UsageError("--el-steps must be odd so the target row is on the grid");
    if (!(o.el_span >= 0.0 && o.el_span <= 90.0)) throw UsageError("--el-span must lie in [0, 90] degrees");
    const GeneratorSpec spec = make_generator(cfg.category);
    const PoseState goal = parse_state_arg(o.state);
    const Landscape l = loss_landscape(spec, goal, o.az_steps, o.el_steps, o.el_span, cfg.threads);
    const std::size_t n = l.loss.size();
    const fs::path dir = prepare_out(cfg);
    const fs::path path = dir / "landscape.csv";
    {
        auto os = open_out(path);
        csv::write_row(os, {"azimuth", "elevation", "loss"});
        for (std::size_t i = 0; i < n; ++i) csv::write_row(os, {csv::number(deg(l.azimuth[i])), csv::number(deg(l.elevation[i])), csv::number(l.loss[i])});
    }
    Manifest m("landscape", cfg, argv);
    m.set("target", format_state(goal));
    m.output(path);
    m.write(dir);
    std::cout << "wrote " << path.string() << " (" << n << " rows)\n";
    return 0;
}

int cmd_demo_export(const Options&, const RunConfig& cfg, const std::vector<std::string>& argv) {
    const GeneratorSpec spec = make_generator(cfg.category);
    DemoSet d;
    if (cfg.policy == PolicyKind::dagger) {
        train_dagger(spec, cfg.il, cfg.seed, &d);
    } else if (cfg.policy == PolicyKind::bc) {
        std::mt19937_64 rng(cfg.seed);
        (void)rng();  // the network seed in train_bc, so both draw the same pairs
        d = make_bc_dataset(spec, rng, cfg.il.demos, cfg.il.ranges, cfg.il.start);
    } else {
        throw UsageError("demo-export supports --policy bc (initial pairs) or dagger (aggregated set)");
    }
    const fs::path dir = prepare_out(cfg);
    export_demos(d, dir / "demos");
    Manifest m("demo-export", cfg, argv);
    m.set("pairs", d.size());
    m.output(dir / "demos.csv");
    m.output(dir / "demos.bin");
    m.write(dir);
    std::cout << "wrote " << d.size() << " pairs to " << (dir / "demos").string() << ".{csv,bin}\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    ad::configure_allocator();
    CLI::App app{"Pose navigation on a differentiable toy generator: gradient descent, RL and imitation policies"};
    app.set_version_flag("--version", PNAV_VERSION_STRING);
    app.require_subcommand(1);
    Options o;
    std::uint64_t seed = 0;
    std::string out;
    std::size_t threads = 1;
    app.add_option("--config", o.config_path, "INI configuration file");
    auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides run.seed)");
    auto* out_opt = app.add_option("--out", out, "output directory (overrides run.out)");
    auto* threads_opt = app.add_option("--threads", threads, "evaluation threads (overrides run.threads)")->check(CLI::PositiveNumber);
    app.add_option("--policy", o.policies, "policy kind(s): gd gd16 gd32 rl bc dagger rl+gd dagger+gd")->delimiter(',');
    app.add_option("--model", o.model, "weight file for learned policies");

    auto* train = app.add_subcommand("train", "train a bc, dagger or rl policy");
    auto* eval = app.add_subcommand("eval", "run an evaluation suite");
    eval->add_option("policy", o.policies, "policy kind(s), as --policy")->delimiter(',');
    eval->add_option("--suite", o.suite, "clean, sweep, robustness, timing or ablation");
    auto* rend = app.add_subcommand("render", "render a target and the trajectory towards it as PPM frames");
    rend->add_option("state", o.state, "target state, e.g. az=30,el=10,ip=0,tx=0,ty=0,scale=0 or mean");
    rend->add_option("--from", o.from, "start state (default: mean)");
    rend->add_option("--steps", o.steps, "policy steps T (T + 1 frames)");
    auto* land = app.add_subcommand("landscape", "perceptual loss over an azimuth x elevation grid");
    land->add_option("state", o.state, "target state (default: mean)");
    land->add_option("--az-steps", o.az_steps, "azimuth samples over the full turn");
    land->add_option("--el-steps", o.el_steps, "elevation samples (odd)");
    land->add_option("--el-span", o.el_span, "elevation half-range in degrees");
    auto* demo = app.add_subcommand("demo-export", "write imitation demonstrations as CSV plus a float32 blob");
    for (auto* sub : {train, eval, rend, land, demo}) sub->fallthrough();

    std::vector<std::string> args(argv, argv + argc);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    if (*seed_opt) o.seed = seed;
    if (*out_opt) o.out = out;
    if (*threads_opt) o.threads = threads;

    try {
        const RunConfig cfg = resolve(o);
        if (*train) return cmd_train(o, cfg, args);
        if (*eval) return cmd_eval(o, cfg, args);
        if (*rend) return cmd_render(o, cfg, args);
        if (*land) return cmd_landscape(o, cfg, args);
        if (*demo) return cmd_demo_export(o, cfg, args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ad::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const ad::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
