// gcpc: data generation, two-stage training, evaluation sweeps, and
// latent-future export for the desk-scale GCPC lab.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gcpc/data.hpp"
#include "gcpc/envs.hpp"
#include "gcpc/errors.hpp"
#include "gcpc/eval.hpp"
#include "gcpc/policy.hpp"
#include "gcpc/runconfig.hpp"
#include "gcpc/trajnet.hpp"
#include "gcpc/viz.hpp"

namespace fs = std::filesystem;
using gcpc::json;

namespace {

json audit_to_json(const gcpc::DatasetAudit& a) {
    return json{{"n_trajectories", a.n_trajectories}, {"mean_length", a.mean_length},
                {"min_length", a.min_length},         {"max_length", a.max_length},
                {"success_fraction", a.success_fraction}, {"mean_return", a.mean_return}};
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw gcpc::DataError("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

json read_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw gcpc::DataError("cannot open " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw gcpc::DataError("parse error in " + path.string() + ": " + e.what());
    }
    return j;
}

gcpc::DatasetMeta load_meta(const fs::path& data_dir) {
    return gcpc::meta_from_json(read_json_file(data_dir / "meta.json"));
}

struct GenDataArgs {
    std::string env;
    std::string layout = "corridor-s";
    std::string style = "play";
    std::int64_t n = 200;
    std::uint64_t seed = 0;
    std::string out;
    std::int64_t cap = 300;
    double noise = 0.2;
};

int cmd_gen_data(const GenDataArgs& a) {
    gcpc::RunConfig rc;
    rc.env_name = a.env;
    rc.layout = a.layout;
    rc.episode_cap = a.cap;
    rc.style = a.style;
    rc.noise_sigma = a.noise;
    rc.n_trajectories = a.n;
    gcpc::CollectorConfig cc = gcpc::collector_from_config(rc);
    gcpc::DatasetAudit audit;
    if (a.env == "minimaze") {
        gcpc::MazeSpec spec = gcpc::maze_spec_from_config(rc);
        audit = gcpc::collect_dataset_minimaze(spec, a.layout, cc, a.seed, a.out);
    } else if (a.env == "linerun") {
        gcpc::LineRunSpec spec;
        spec.horizon = a.cap;
        audit = gcpc::collect_dataset_linerun(spec, cc, a.seed, a.out);
    } else {
        throw gcpc::ConfigError("unknown env '" + a.env + "' (valid: minimaze, linerun)");
    }
    std::cout << audit_to_json(audit).dump() << "\n";
    return 0;
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string trajnet;
    std::string conditioning;
    std::uint64_t seed = 0;
    std::string out;
};

gcpc::RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return gcpc::resolve_run_config(json::object());
    return gcpc::load_run_config(path);
}

int cmd_train_trajnet(const TrainArgs& a) {
    gcpc::RunConfig rc = load_config_or_default(a.config);
    gcpc::Dataset ds = gcpc::load_dataset(a.data);
    rc.trajnet.state_dim = ds.meta.state_dim;
    rc.trajnet.action_dim = ds.meta.action_dim;
    rc.trajnet.goal_width = rc.trajnet.goal_conditioning ? ds.meta.goal_width() : 0;

    fs::create_directories(a.out);
    write_json_file(fs::path(a.out) / "resolved-config.json", gcpc::run_config_to_json(rc));
    write_json_file(fs::path(a.out) / "run.json",
                    json{{"command", "train-trajnet"},
                         {"data", fs::absolute(a.data).string()},
                         {"seed", a.seed}});

    gcpc::TrajNetRunResult r = gcpc::train_trajnet(rc.trajnet, ds, a.seed, a.out, &std::cerr);
    std::cout << json{{"best_epoch", r.best_epoch}, {"best_val_loss", r.best_val_loss}}.dump()
              << "\n";
    return 0;
}

int cmd_train_policy(const TrainArgs& a) {
    gcpc::RunConfig rc = load_config_or_default(a.config);
    if (!a.conditioning.empty())
        rc.policy.conditioning = gcpc::conditioning_from_string(a.conditioning);
    gcpc::Dataset ds = gcpc::load_dataset(a.data);

    std::optional<gcpc::LoadedTrajNet> loaded;
    if (rc.policy.conditioning != gcpc::Conditioning::none) {
        if (a.trajnet.empty())
            throw gcpc::ConfigError("--trajnet is required for conditioning '" +
                                    gcpc::to_string(rc.policy.conditioning) + "'");
        loaded = gcpc::load_trajnet(a.trajnet);
    }

    fs::create_directories(a.out);
    rc.policy.state_dim = ds.meta.state_dim;
    rc.policy.action_dim = ds.meta.action_dim;
    rc.policy.goal_width = ds.meta.goal_width();
    rc.policy.cond_width =
        gcpc::conditioning_width(rc.policy.conditioning, loaded ? &loaded->model : nullptr);
    write_json_file(fs::path(a.out) / "resolved-config.json", gcpc::run_config_to_json(rc));
    write_json_file(fs::path(a.out) / "run.json",
                    json{{"command", "train-policy"},
                         {"data", fs::absolute(a.data).string()},
                         {"trajnet", a.trajnet.empty() ? json() : json(fs::absolute(a.trajnet).string())},
                         {"conditioning", gcpc::to_string(rc.policy.conditioning)},
                         {"seed", a.seed}});

    gcpc::PolicyRunResult r =
        gcpc::train_policy(rc.policy, loaded ? &loaded->model : nullptr, ds, a.seed, a.out,
                           &std::cerr, loaded ? &loaded->stats : nullptr);
    json names = json::array();
    for (const auto& p : r.retained_checkpoints) names.push_back(p.filename().string());
    std::cout << json{{"retained_checkpoints", names}, {"final_epoch_loss", r.final_epoch_loss}}.dump()
              << "\n";
    return 0;
}

struct EvalArgs {
    std::string run;
    std::int64_t episodes = -1;
    std::vector<std::uint64_t> seeds{0};
};

int cmd_eval(const EvalArgs& a) {
    fs::path run_dir(a.run);
    json run_meta = read_json_file(run_dir / "run.json");
    if (run_meta.value("command", "") != "train-policy")
        throw gcpc::DataError("eval: " + a.run + " is not a policy run directory");
    gcpc::RunConfig rc = gcpc::resolve_run_config(read_json_file(run_dir / "resolved-config.json"));
    gcpc::DatasetMeta meta = load_meta(run_meta.at("data").get<std::string>());
    std::optional<fs::path> trajnet_path;
    if (!run_meta.at("trajnet").is_null())
        trajnet_path = fs::path(run_meta.at("trajnet").get<std::string>());

    std::vector<fs::path> checkpoints;
    if (fs::exists(run_dir / "checkpoints"))
        for (const auto& e : fs::directory_iterator(run_dir / "checkpoints"))
            if (e.path().filename().string().starts_with("epoch_")) checkpoints.push_back(e.path());
    std::sort(checkpoints.begin(), checkpoints.end());
    if (checkpoints.empty()) throw gcpc::DataError("eval: no checkpoints in " + a.run);
    if (checkpoints.size() > 5)
        checkpoints.erase(checkpoints.begin(),
                          checkpoints.begin() + static_cast<std::ptrdiff_t>(checkpoints.size() - 5));

    gcpc::EvalConfig ec;
    ec.n_episodes = a.episodes > 0 ? a.episodes : rc.eval_episodes;
    if (rc.target_return >= 0) ec.target_return = rc.target_return;

    std::ofstream metrics(run_dir / "metrics.jsonl", std::ios::app);
    json runs = json::array();
    std::vector<double> chosen;
    std::cout << "seed";
    for (const auto& ck : checkpoints) std::cout << "  " << ck.filename().string();
    std::cout << "  chosen\n";
    for (auto seed : a.seeds) {
        gcpc::RunRecord rec = gcpc::evaluate_run(checkpoints, trajnet_path, meta, ec, seed);
        std::cout << seed;
        for (std::size_t i = 0; i < rec.checkpoint_scores.size(); ++i) {
            std::int64_t epoch = std::stoll(checkpoints[i].filename().string().substr(6, 4));
            metrics << json{{"phase", "eval"},
                            {"seed", seed},
                            {"epoch", epoch},
                            {"score", rec.checkpoint_scores[i]},
                            {"n_episodes", ec.n_episodes}}
                           .dump()
                    << "\n";
            std::cout << "  " << rec.checkpoint_scores[i];
        }
        std::cout << "  " << rec.chosen_score << "\n";
        chosen.push_back(rec.chosen_score);
        runs.push_back(json{{"seed", rec.seed},
                            {"checkpoint_scores", rec.checkpoint_scores},
                            {"chosen_score", rec.chosen_score}});
    }
    gcpc::AggregateReport agg = gcpc::aggregate_seeds(chosen);
    json report = gcpc::aggregate_to_json(agg);
    report["runs"] = runs;
    write_json_file(run_dir / "report.json", report);
    std::cout << "mean " << agg.mean << "  std " << agg.stddev << "  median " << agg.median
              << "  iqm " << agg.iqm << "\n";
    return 0;
}

struct VizArgs {
    std::string trajnet;
    std::string data;
    std::int64_t index = 0;
    std::int64_t t = 1;
    bool no_goal = false;
    std::string out;
};

int cmd_viz_future(const VizArgs& a) {
    gcpc::LoadedTrajNet loaded = gcpc::load_trajnet(a.trajnet);
    gcpc::Dataset ds = gcpc::load_dataset(a.data);
    gcpc::FutureViz viz =
        gcpc::compute_future_viz(loaded.model, loaded.stats, ds, a.index, a.t, !a.no_goal);
    fs::path out(a.out);
    std::string ext = out.extension().string();
    if (ext == ".csv") {
        gcpc::write_future_csv(out, viz);
    } else if (ext == ".svg") {
        if (ds.meta.layout.empty())
            throw gcpc::ConfigError("viz: svg output needs a maze dataset (layout in meta.json)");
        gcpc::MazeSpec spec = gcpc::make_maze(ds.meta.layout);
        gcpc::write_future_svg(out, spec, viz);
    } else {
        throw gcpc::ConfigError("viz: --out must end in .csv or .svg");
    }
    std::cout << json{{"out", a.out}, {"rows", viz.decoded.dim(0)}}.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"goal-conditioned predictive coding lab"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate an offline dataset");
    gen_cmd->add_option("--env", gen.env, "environment: minimaze or linerun")->required();
    gen_cmd->add_option("--layout", gen.layout, "maze layout name or layout file");
    gen_cmd->add_option("--style", gen.style, "collector style: play or expert");
    gen_cmd->add_option("--n", gen.n, "number of trajectories");
    gen_cmd->add_option("--seed", gen.seed, "rng seed");
    gen_cmd->add_option("--out", gen.out, "output dataset directory")->required();
    gen_cmd->add_option("--cap", gen.cap, "episode cap / horizon");
    gen_cmd->add_option("--noise", gen.noise, "collector action noise sigma");

    TrainArgs tt;
    auto* tt_cmd = app.add_subcommand("train-trajnet", "stage 1: trajectory representation learning");
    tt_cmd->add_option("--config", tt.config, "run config JSON");
    tt_cmd->add_option("--data", tt.data, "dataset directory")->required();
    tt_cmd->add_option("--seed", tt.seed, "rng seed");
    tt_cmd->add_option("--out", tt.out, "run directory")->required();

    TrainArgs tp;
    auto* tp_cmd = app.add_subcommand("train-policy", "stage 2: policy learning");
    tp_cmd->add_option("--config", tp.config, "run config JSON");
    tp_cmd->add_option("--data", tp.data, "dataset directory")->required();
    tp_cmd->add_option("--trajnet", tp.trajnet, "frozen trajnet checkpoint");
    tp_cmd->add_option("--conditioning", tp.conditioning,
                       "bottleneck, explicit-future, or none (overrides config)");
    tp_cmd->add_option("--seed", tp.seed, "rng seed");
    tp_cmd->add_option("--out", tp.out, "run directory")->required();

    EvalArgs ev;
    auto* ev_cmd = app.add_subcommand("eval", "best-of-last-five evaluation protocol");
    ev_cmd->add_option("--run", ev.run, "policy run directory")->required();
    ev_cmd->add_option("--episodes", ev.episodes, "episodes per checkpoint");
    ev_cmd->add_option("--seeds", ev.seeds, "evaluation seeds")->expected(-1);

    VizArgs vz;
    auto* vz_cmd = app.add_subcommand("viz-future", "decode and export a latent future");
    vz_cmd->add_option("--trajnet", vz.trajnet, "trajnet checkpoint")->required();
    vz_cmd->add_option("--data", vz.data, "dataset directory")->required();
    vz_cmd->add_option("--index", vz.index, "trajectory index")->required();
    vz_cmd->add_option("--t", vz.t, "anchor timestep (1-based)")->required();
    vz_cmd->add_flag("--no-goal", vz.no_goal, "omit the goal token");
    vz_cmd->add_option("--out", vz.out, "output file (.csv or .svg)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_data(gen);
        if (tt_cmd->parsed()) return cmd_train_trajnet(tt);
        if (tp_cmd->parsed()) return cmd_train_policy(tp);
        if (ev_cmd->parsed()) return cmd_eval(ev);
        if (vz_cmd->parsed()) return cmd_viz_future(vz);
    } catch (const gcpc::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const gcpc::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const gcpc::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
