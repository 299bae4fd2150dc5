#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "gcpc/data.hpp"
#include "gcpc/errors.hpp"
#include "gcpc/policy.hpp"
#include "gcpc/trajnet.hpp"

namespace gcpc {

// ---------------------------------------------------------------------------
// run configuration: env / data / trajnet / policy / eval sections
// ---------------------------------------------------------------------------

struct RunConfig {
    // env
    std::string env_name = "minimaze";
    std::string layout = "corridor-s";  // builtin name or a layout file path
    std::int64_t episode_cap = 300;     // maze cap / linerun horizon
    // data
    std::int64_t n_trajectories = 200;
    std::string style = "play";
    double kp = 1.0;
    double kd = 0.6;
    double noise_sigma = 0.2;
    double switch_radius = 0.4;
    // models
    TrajNetConfig trajnet;
    PolicyConfig policy;
    // eval
    std::int64_t eval_episodes = 100;
    double target_return = -1;  // < 0 means "expert reference"
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["env"] = {{"name", c.env_name}, {"layout", c.layout}, {"episode_cap", c.episode_cap}};
    j["data"] = {{"n_trajectories", c.n_trajectories}, {"style", c.style},      {"kp", c.kp},
                 {"kd", c.kd},                         {"noise_sigma", c.noise_sigma},
                 {"switch_radius", c.switch_radius}};
    j["trajnet"] = trajnet_config_to_json(c.trajnet);
    j["policy"] = policy_config_to_json(c.policy);
    j["eval"] = {{"n_episodes", c.eval_episodes}, {"target_return", c.target_return}};
    return j;
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& user, const nlohmann::json& skeleton,
                                const std::string& where) {
    if (!user.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, value] : user.items()) {
        auto it = skeleton.find(key);
        if (it == skeleton.end())
            throw ConfigError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
        if (it->is_object())
            reject_unknown_keys(value, *it, where.empty() ? key : where + "." + key);
    }
}

inline void deep_merge(nlohmann::json& base, const nlohmann::json& overlay) {
    for (const auto& [key, value] : overlay.items()) {
        if (value.is_object() && base[key].is_object())
            deep_merge(base[key], value);
        else
            base[key] = value;
    }
}

}  // namespace detail

/// Overlays a user config document onto the defaults; any key not present in
/// the fully resolved skeleton is rejected.
inline RunConfig resolve_run_config(const nlohmann::json& user) {
    nlohmann::json base = run_config_to_json(RunConfig{});
    detail::reject_unknown_keys(user, base, "");
    detail::deep_merge(base, user);

    RunConfig c;
    try {
        const auto& env = base.at("env");
        c.env_name = env.at("name").get<std::string>();
        c.layout = env.at("layout").get<std::string>();
        c.episode_cap = env.at("episode_cap").get<std::int64_t>();
        const auto& data = base.at("data");
        c.n_trajectories = data.at("n_trajectories").get<std::int64_t>();
        c.style = data.at("style").get<std::string>();
        c.kp = data.at("kp").get<double>();
        c.kd = data.at("kd").get<double>();
        c.noise_sigma = data.at("noise_sigma").get<double>();
        c.switch_radius = data.at("switch_radius").get<double>();
        c.trajnet = trajnet_config_from_json(base.at("trajnet"));
        c.policy = policy_config_from_json(base.at("policy"));
        const auto& ev = base.at("eval");
        c.eval_episodes = ev.at("n_episodes").get<std::int64_t>();
        c.target_return = ev.at("target_return").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + std::string(e.what()));
    }
    if (c.env_name != "minimaze" && c.env_name != "linerun")
        throw ConfigError("config: env.name must be 'minimaze' or 'linerun'");
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    return resolve_run_config(j);
}

inline MazeSpec maze_spec_from_config(const RunConfig& c) {
    MazeSpec spec;
    if (builtin_layouts().count(c.layout)) {
        spec = maze_from_layout_name(c.layout);
    } else if (std::filesystem::exists(c.layout)) {
        std::ifstream f(c.layout);
        std::vector<std::string> rows;
        std::string line;
        while (std::getline(f, line))
            if (!line.empty()) rows.push_back(line);
        spec = make_maze(rows);
    } else {
        std::string valid;
        for (const auto& [k, v] : builtin_layouts()) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError("unknown layout '" + c.layout + "' (valid: " + valid +
                          ", or a layout file path)");
    }
    spec.episode_cap = c.episode_cap;
    return spec;
}

inline CollectorConfig collector_from_config(const RunConfig& c) {
    CollectorConfig cc;
    cc.kp = c.kp;
    cc.kd = c.kd;
    cc.noise_sigma = c.noise_sigma;
    cc.switch_radius = c.switch_radius;
    cc.n_trajectories = c.n_trajectories;
    cc.style = style_from_string(c.style);
    return cc;
}

}  // namespace gcpc
