#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcpc/errors.hpp"
#include "gcpc/rng.hpp"

namespace gcpc {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// trajectories and dataset metadata
// ---------------------------------------------------------------------------

struct Trajectory {
    std::vector<std::vector<double>> states;   // H x state_dim
    std::vector<std::vector<double>> actions;  // H x action_dim
    std::optional<std::vector<double>> rewards;

    std::int64_t length() const { return static_cast<std::int64_t>(states.size()); }
};

enum class GoalMode { target_state, return_to_go };

inline std::string to_string(GoalMode m) {
    return m == GoalMode::target_state ? "target_state" : "return_to_go";
}

inline GoalMode goal_mode_from_string(const std::string& s) {
    if (s == "target_state") return GoalMode::target_state;
    if (s == "return_to_go") return GoalMode::return_to_go;
    throw DataError("unknown goal_mode '" + s + "'");
}

struct DatasetMeta {
    std::string env_id;
    std::int64_t state_dim = 0;
    std::int64_t action_dim = 0;
    std::int64_t max_episode_steps = 0;  // H_max
    GoalMode goal_mode = GoalMode::target_state;
    std::vector<std::int64_t> goal_subspace;
    double ref_score_random = 0.0;
    double ref_score_expert = 0.0;
    // environment reconstruction extras
    std::string layout_name;
    std::vector<std::string> layout;
    std::uint64_t split_seed = 0;

    std::int64_t goal_width() const {
        return goal_mode == GoalMode::target_state
                   ? static_cast<std::int64_t>(goal_subspace.size())
                   : 1;
    }
};

inline json meta_to_json(const DatasetMeta& m) {
    json j;
    j["env_id"] = m.env_id;
    j["state_dim"] = m.state_dim;
    j["action_dim"] = m.action_dim;
    j["max_episode_steps"] = m.max_episode_steps;
    j["goal_mode"] = to_string(m.goal_mode);
    j["goal_subspace"] = m.goal_subspace;
    j["ref_score_random"] = m.ref_score_random;
    j["ref_score_expert"] = m.ref_score_expert;
    j["layout_name"] = m.layout_name;
    j["layout"] = m.layout;
    j["split_seed"] = m.split_seed;
    return j;
}

inline DatasetMeta meta_from_json(const json& j) {
    DatasetMeta m;
    try {
        m.env_id = j.at("env_id").get<std::string>();
        m.state_dim = j.at("state_dim").get<std::int64_t>();
        m.action_dim = j.at("action_dim").get<std::int64_t>();
        m.max_episode_steps = j.at("max_episode_steps").get<std::int64_t>();
        m.goal_mode = goal_mode_from_string(j.at("goal_mode").get<std::string>());
        m.goal_subspace = j.at("goal_subspace").get<std::vector<std::int64_t>>();
        m.ref_score_random = j.at("ref_score_random").get<double>();
        m.ref_score_expert = j.at("ref_score_expert").get<double>();
        m.layout_name = j.at("layout_name").get<std::string>();
        m.layout = j.at("layout").get<std::vector<std::string>>();
        m.split_seed = j.at("split_seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw DataError(std::string("meta.json: ") + e.what());
    }
    for (auto idx : m.goal_subspace)
        if (idx < 0 || idx >= m.state_dim)
            throw DataError("meta.json: goal_subspace index out of range");
    return m;
}

struct Dataset {
    DatasetMeta meta;
    std::vector<Trajectory> trajectories;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;

    const Trajectory& train(std::size_t i) const { return trajectories[train_indices[i]]; }
    const Trajectory& val(std::size_t i) const { return trajectories[val_indices[i]]; }
};

namespace detail {

inline void validate_trajectory(const Trajectory& t, const DatasetMeta& m, std::size_t index) {
    auto fail = [index](const std::string& why) {
        throw DataError("trajectory " + std::to_string(index) + ": " + why);
    };
    if (t.states.empty()) fail("empty");
    if (t.actions.size() != t.states.size()) fail("states/actions length mismatch");
    if (t.rewards && t.rewards->size() != t.states.size()) fail("rewards length mismatch");
    if (static_cast<std::int64_t>(t.states.size()) > m.max_episode_steps)
        fail("longer than max_episode_steps");
    for (const auto& s : t.states)
        if (static_cast<std::int64_t>(s.size()) != m.state_dim) fail("state width mismatch");
    for (const auto& a : t.actions)
        if (static_cast<std::int64_t>(a.size()) != m.action_dim) fail("action width mismatch");
}

inline void assign_split(Dataset& ds) {
    std::size_t n = ds.trajectories.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream rng = RngStream(ds.meta.split_seed).split("train_val_split");
    rng.shuffle(order);
    std::size_t n_val = std::max<std::size_t>(1, n / 10);
    ds.val_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    ds.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(ds.val_indices.begin(), ds.val_indices.end());
    std::sort(ds.train_indices.begin(), ds.train_indices.end());
}

}  // namespace detail

/// Dataset directory: meta.json plus trajectories.jsonl (one JSON object per
/// line: {"states": [[...]], "actions": [[...]], "rewards": [...] | null}).
inline void save_dataset(const std::filesystem::path& dir, const DatasetMeta& meta,
                         const std::vector<Trajectory>& trajectories) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "meta.json");
        if (!f) throw DataError("cannot write " + (dir / "meta.json").string());
        f << meta_to_json(meta).dump(2) << "\n";
    }
    std::ofstream f(dir / "trajectories.jsonl");
    if (!f) throw DataError("cannot write " + (dir / "trajectories.jsonl").string());
    for (const auto& t : trajectories) {
        json j;
        j["states"] = t.states;
        j["actions"] = t.actions;
        if (t.rewards)
            j["rewards"] = *t.rewards;
        else
            j["rewards"] = nullptr;
        f << j.dump() << "\n";
    }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    {
        std::ifstream f(dir / "meta.json");
        if (!f) throw DataError("missing " + (dir / "meta.json").string());
        json j;
        try {
            f >> j;
        } catch (const json::exception& e) {
            throw DataError("meta.json parse error: " + std::string(e.what()));
        }
        ds.meta = meta_from_json(j);
    }
    std::ifstream f(dir / "trajectories.jsonl");
    if (!f) throw DataError("missing " + (dir / "trajectories.jsonl").string());
    std::string line;
    std::size_t index = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("trajectories.jsonl record " + std::to_string(index) + ": " + e.what());
        }
        Trajectory t;
        try {
            t.states = j.at("states").get<std::vector<std::vector<double>>>();
            t.actions = j.at("actions").get<std::vector<std::vector<double>>>();
            if (!j.at("rewards").is_null())
                t.rewards = j.at("rewards").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw DataError("trajectories.jsonl record " + std::to_string(index) + ": " + e.what());
        }
        detail::validate_trajectory(t, ds.meta, index);
        ds.trajectories.push_back(std::move(t));
        ++index;
    }
    if (ds.trajectories.empty()) throw DataError("dataset has no trajectories");
    if (ds.trajectories.size() < 2) throw DataError("dataset needs at least 2 trajectories to split");
    detail::assign_split(ds);
    return ds;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

struct NormStats {
    std::vector<double> state_mean;
    std::vector<double> state_std;  // floored at 1e-6
    double rtg_mean = 0.0;
    double rtg_std = 1.0;
};

inline double compute_rtg(const Trajectory& tr, std::int64_t t, std::int64_t h_max) {
    if (!tr.rewards) throw DataError("return-to-go requested but trajectory has no rewards");
    double acc = 0.0;
    for (std::int64_t i = t; i <= tr.length(); ++i)
        acc += (*tr.rewards)[static_cast<std::size_t>(i - 1)];
    return acc / static_cast<double>(h_max - t + 1);
}

/// Per-dimension z-score statistics over the train split only.
inline NormStats compute_norm_stats(const Dataset& ds) {
    NormStats st;
    std::size_t d = static_cast<std::size_t>(ds.meta.state_dim);
    st.state_mean.assign(d, 0.0);
    st.state_std.assign(d, 0.0);
    double n = 0;
    for (auto idx : ds.train_indices)
        for (const auto& s : ds.trajectories[idx].states) {
            for (std::size_t i = 0; i < d; ++i) st.state_mean[i] += s[i];
            n += 1;
        }
    if (n == 0) throw DataError("compute_norm_stats: empty train split");
    for (auto& m : st.state_mean) m /= n;
    for (auto idx : ds.train_indices)
        for (const auto& s : ds.trajectories[idx].states)
            for (std::size_t i = 0; i < d; ++i) {
                double dv = s[i] - st.state_mean[i];
                st.state_std[i] += dv * dv;
            }
    for (auto& v : st.state_std) v = std::max(std::sqrt(v / n), 1e-6);

    if (ds.meta.goal_mode == GoalMode::return_to_go) {
        double rn = 0, rsum = 0, rsq = 0;
        for (auto idx : ds.train_indices) {
            const auto& tr = ds.trajectories[idx];
            for (std::int64_t t = 1; t <= tr.length(); ++t) {
                double g = compute_rtg(tr, t, ds.meta.max_episode_steps);
                rsum += g;
                rsq += g * g;
                rn += 1;
            }
        }
        st.rtg_mean = rsum / rn;
        st.rtg_std = std::max(std::sqrt(rsq / rn - st.rtg_mean * st.rtg_mean), 1e-6);
    }
    return st;
}

inline void normalize_state(const NormStats& st, std::span<double> s) {
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = (s[i] - st.state_mean[i]) / st.state_std[i];
}

inline void denormalize_dims(const NormStats& st, std::span<double> v,
                             const std::vector<std::int64_t>& dims) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto d = static_cast<std::size_t>(dims[i % dims.size()]);
        v[i] = v[i] * st.state_std[d] + st.state_mean[d];
    }
}

inline json norm_stats_to_json(const NormStats& st) {
    json j;
    j["state_mean"] = st.state_mean;
    j["state_std"] = st.state_std;
    j["rtg_mean"] = st.rtg_mean;
    j["rtg_std"] = st.rtg_std;
    return j;
}

inline NormStats norm_stats_from_json(const json& j) {
    NormStats st;
    st.state_mean = j.at("state_mean").get<std::vector<double>>();
    st.state_std = j.at("state_std").get<std::vector<double>>();
    st.rtg_mean = j.at("rtg_mean").get<double>();
    st.rtg_std = j.at("rtg_std").get<double>();
    return st;
}

// ---------------------------------------------------------------------------
// window and goal sampling
// ---------------------------------------------------------------------------

/// A (history k, future p) window anchored at 1-based timestep t. Positions
/// outside the episode repeat the nearest endpoint state and are flagged.
struct WindowSample {
    std::int64_t t = 0;
    std::vector<std::vector<double>> history;          // k states
    std::vector<std::vector<double>> future;           // p states
    std::vector<std::vector<double>> history_actions;  // k actions
    std::vector<std::uint8_t> history_pad;             // 1 = padded
    std::vector<std::uint8_t> future_pad;
};

inline WindowSample sample_window(const Trajectory& tr, std::int64_t t, std::int64_t k,
                                  std::int64_t p) {
    std::int64_t H = tr.length();
    if (t < 1 || t > H) throw std::invalid_argument("sample_window: t out of range");
    WindowSample w;
    w.t = t;
    w.history.reserve(static_cast<std::size_t>(k));
    for (std::int64_t i = t - k + 1; i <= t; ++i) {
        std::int64_t j = std::max<std::int64_t>(i, 1);
        w.history.push_back(tr.states[static_cast<std::size_t>(j - 1)]);
        w.history_actions.push_back(tr.actions[static_cast<std::size_t>(j - 1)]);
        w.history_pad.push_back(i < 1 ? 1 : 0);
    }
    w.future.reserve(static_cast<std::size_t>(p));
    for (std::int64_t i = t + 1; i <= t + p; ++i) {
        std::int64_t j = std::min<std::int64_t>(i, H);
        w.future.push_back(tr.states[static_cast<std::size_t>(j - 1)]);
        w.future_pad.push_back(i > H ? 1 : 0);
    }
    return w;
}

/// Either a target-state configuration over the goal subspace or a scalar
/// average return-to-go.
struct Goal {
    GoalMode mode = GoalMode::target_state;
    std::vector<double> target;
    double rtg = 0.0;

    std::int64_t width() const {
        return mode == GoalMode::target_state ? static_cast<std::int64_t>(target.size()) : 1;
    }
    std::vector<double> as_vector() const {
        return mode == GoalMode::target_state ? target : std::vector<double>{rtg};
    }
};

/// Target mode picks a uniformly random future state's goal-subspace slice;
/// rtg mode averages remaining rewards over the constant-horizon denominator.
inline Goal sample_goal(const Trajectory& tr, std::int64_t t, GoalMode mode,
                        const std::vector<std::int64_t>& goal_subspace, std::int64_t h_max,
                        RngStream& rng) {
    std::int64_t H = tr.length();
    if (t < 1 || t > H) throw std::invalid_argument("sample_goal: t out of range");
    Goal g;
    g.mode = mode;
    if (mode == GoalMode::target_state) {
        if (t == H)
            throw std::invalid_argument("sample_goal: no future state at t == H; resample t");
        std::int64_t j = t + 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(H - t)));
        const auto& s = tr.states[static_cast<std::size_t>(j - 1)];
        g.target.reserve(goal_subspace.size());
        for (auto d : goal_subspace) g.target.push_back(s[static_cast<std::size_t>(d)]);
    } else {
        g.rtg = compute_rtg(tr, t, h_max);
    }
    return g;
}

inline std::vector<double> normalize_goal(const NormStats& st, const Goal& g,
                                          const std::vector<std::int64_t>& goal_subspace) {
    if (g.mode == GoalMode::target_state) {
        std::vector<double> out = g.target;
        for (std::size_t i = 0; i < out.size(); ++i) {
            auto d = static_cast<std::size_t>(goal_subspace[i]);
            out[i] = (out[i] - st.state_mean[d]) / st.state_std[d];
        }
        return out;
    }
    return {(g.rtg - st.rtg_mean) / st.rtg_std};
}

}  // namespace gcpc
