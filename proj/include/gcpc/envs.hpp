#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gcpc/data.hpp"
#include "gcpc/errors.hpp"
#include "gcpc/rng.hpp"

namespace gcpc {

// ---------------------------------------------------------------------------
// MiniMaze: continuous point-mass navigation over a cell grid
// ---------------------------------------------------------------------------

using Cell = std::array<std::int64_t, 2>;  // {col, row}

struct MazeSpec {
    std::vector<std::string> layout;  // '#' wall, '.' free, 'S' start, 'G' goal
    double dt = 0.1;
    double v_max = 2.0;
    double accel_scale = 10.0;
    double success_radius = 0.5;
    std::int64_t episode_cap = 300;

    std::vector<Cell> start_cells;
    Cell goal_cell{0, 0};
    std::array<double, 2> goal_pos{0, 0};  // defaults to the G cell center

    std::int64_t rows() const { return static_cast<std::int64_t>(layout.size()); }
    std::int64_t cols() const { return static_cast<std::int64_t>(layout[0].size()); }

    bool in_bounds(std::int64_t col, std::int64_t row) const {
        return col >= 0 && row >= 0 && col < cols() && row < rows();
    }
    bool is_wall(std::int64_t col, std::int64_t row) const {
        if (!in_bounds(col, row)) return true;
        return layout[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)] == '#';
    }
    bool is_wall_at(double x, double y) const {
        return is_wall(static_cast<std::int64_t>(std::floor(x)), static_cast<std::int64_t>(std::floor(y)));
    }
    std::int64_t wall_count() const {
        std::int64_t n = 0;
        for (const auto& row : layout)
            for (char c : row) n += c == '#';
        return n;
    }
};

inline std::array<double, 2> cell_center(Cell c) {
    return {static_cast<double>(c[0]) + 0.5, static_cast<double>(c[1]) + 0.5};
}

inline MazeSpec make_maze(std::vector<std::string> layout) {
    MazeSpec spec;
    spec.layout = std::move(layout);
    if (spec.layout.empty()) throw DataError("maze layout: empty");
    std::size_t width = spec.layout[0].size();
    bool has_goal = false, has_free = false;
    for (std::size_t r = 0; r < spec.layout.size(); ++r) {
        const std::string& row = spec.layout[r];
        if (row.size() != width) throw DataError("maze layout: rows have unequal lengths");
        for (std::size_t c = 0; c < row.size(); ++c) {
            char ch = row[c];
            if (ch != '#' && ch != '.' && ch != 'S' && ch != 'G')
                throw DataError(std::string("maze layout: invalid character '") + ch + "'");
            bool boundary = r == 0 || c == 0 || r + 1 == spec.layout.size() || c + 1 == width;
            if (boundary && ch != '#') throw DataError("maze layout: outer boundary must be walls");
            if (ch != '#') has_free = true;
            Cell cell{static_cast<std::int64_t>(c), static_cast<std::int64_t>(r)};
            if (ch == 'S') spec.start_cells.push_back(cell);
            if (ch == 'G' && !has_goal) {
                spec.goal_cell = cell;
                has_goal = true;
            }
        }
    }
    if (!has_free) throw DataError("maze layout: no free cell");
    if (spec.start_cells.empty()) throw DataError("maze layout: no start cell");
    if (!has_goal) throw DataError("maze layout: no goal cell");
    spec.goal_pos = cell_center(spec.goal_cell);
    return spec;
}

struct MazeState {
    double x = 0, y = 0;
    double vx = 0, vy = 0;
    std::int64_t steps = 0;

    std::vector<double> observation() const { return {x, y, vx, vy}; }
};

inline MazeState maze_reset(const MazeSpec& spec, RngStream& rng) {
    Cell c = spec.start_cells[rng.below(spec.start_cells.size())];
    auto [cx, cy] = cell_center(c);
    MazeState s;
    s.x = cx + rng.uniform(-0.3, 0.3);
    s.y = cy + rng.uniform(-0.3, 0.3);
    return s;
}

struct MazeStepResult {
    MazeState state;
    double reward = 0;
    bool done = false;
};

/// Velocity integration with per-axis wall collisions: an axis whose move
/// would land in a wall cell keeps its coordinate and has its velocity
/// zeroed.
inline MazeStepResult maze_step(const MazeSpec& spec, const MazeState& state, double ax, double ay) {
    ax = std::clamp(ax, -1.0, 1.0);
    ay = std::clamp(ay, -1.0, 1.0);
    MazeState s = state;
    s.vx = std::clamp(s.vx + ax * spec.dt * spec.accel_scale, -spec.v_max, spec.v_max);
    s.vy = std::clamp(s.vy + ay * spec.dt * spec.accel_scale, -spec.v_max, spec.v_max);
    double nx = s.x + s.vx * spec.dt;
    if (spec.is_wall_at(nx, s.y)) {
        nx = s.x;
        s.vx = 0;
    }
    double ny = s.y + s.vy * spec.dt;
    if (spec.is_wall_at(nx, ny)) {
        ny = s.y;
        s.vy = 0;
    }
    s.x = nx;
    s.y = ny;
    s.steps = state.steps + 1;

    MazeStepResult r;
    double dx = s.x - spec.goal_pos[0], dy = s.y - spec.goal_pos[1];
    bool success = std::sqrt(dx * dx + dy * dy) <= spec.success_radius;
    r.reward = success ? 1.0 : 0.0;
    r.done = success || s.steps >= spec.episode_cap;
    r.state = s;
    return r;
}

// ---------------------------------------------------------------------------
// shortest cell paths
// ---------------------------------------------------------------------------

/// Breadth-first shortest path between free cells; neighbor ties expand in
/// N, E, S, W order. Returns the full waypoint list of cell centers,
/// including both endpoints.
inline std::vector<std::array<double, 2>> plan_waypoints(const MazeSpec& spec, Cell start, Cell goal) {
    if (spec.is_wall(start[0], start[1]) || spec.is_wall(goal[0], goal[1]))
        throw std::invalid_argument("plan_waypoints: endpoint is a wall cell");
    if (start == goal) return {cell_center(start)};
    const std::array<std::array<std::int64_t, 2>, 4> dirs{{{0, -1}, {1, 0}, {0, 1}, {-1, 0}}};
    std::vector<std::int64_t> parent(static_cast<std::size_t>(spec.rows() * spec.cols()), -1);
    auto id = [&](Cell c) { return c[1] * spec.cols() + c[0]; };
    std::deque<Cell> queue{start};
    parent[static_cast<std::size_t>(id(start))] = id(start);
    while (!queue.empty()) {
        Cell c = queue.front();
        queue.pop_front();
        if (c == goal) break;
        for (const auto& d : dirs) {
            Cell n{c[0] + d[0], c[1] + d[1]};
            if (spec.is_wall(n[0], n[1])) continue;
            auto& p = parent[static_cast<std::size_t>(id(n))];
            if (p >= 0) continue;
            p = id(c);
            queue.push_back(n);
        }
    }
    if (parent[static_cast<std::size_t>(id(goal))] < 0)
        throw std::invalid_argument("plan_waypoints: cells are not connected");
    std::vector<Cell> path{goal};
    while (path.back() != start) {
        std::int64_t p = parent[static_cast<std::size_t>(id(path.back()))];
        path.push_back({p % spec.cols(), p / spec.cols()});
    }
    std::reverse(path.begin(), path.end());
    std::vector<std::array<double, 2>> centers;
    centers.reserve(path.size());
    for (Cell c : path) centers.push_back(cell_center(c));
    return centers;
}

// ---------------------------------------------------------------------------
// LineRun: 1-D dense-reward locomotion
// ---------------------------------------------------------------------------

struct LineRunSpec {
    std::int64_t horizon = 200;
};

struct LineRunState {
    double x = 0, v = 0;
    std::int64_t steps = 0;

    std::vector<double> observation() const { return {x, v}; }
};

struct LineRunStepResult {
    LineRunState state;
    double reward = 0;
    bool done = false;
};

inline LineRunStepResult linerun_step(const LineRunSpec& spec, const LineRunState& state, double a) {
    a = std::clamp(a, -1.0, 1.0);
    LineRunState s = state;
    s.v = std::clamp(s.v + 0.1 * a, -1.0, 1.0);
    s.x = s.x + 0.1 * s.v;
    s.steps = state.steps + 1;
    return {s, s.v, s.steps >= spec.horizon};
}

// ---------------------------------------------------------------------------
// builtin layouts
// ---------------------------------------------------------------------------

// corridor-S: one long winding path, the long-horizon testbed.
inline const std::vector<std::string>& layout_corridor_s() {
    static const std::vector<std::string> rows = {
        "###########",
        "#S........#",
        "#########.#",
        "#.........#",
        "#.#########",
        "#........G#",
        "###########",
    };
    return rows;
}

// junction-T: a fork whose correct branch depends on the goal, the
// goal-ambiguity testbed.
inline const std::vector<std::string>& layout_junction_t() {
    static const std::vector<std::string> rows = {
        "###############",
        "#G............#",
        "#######.#######",
        "#######.#######",
        "#######.#######",
        "#######S#######",
        "###############",
    };
    return rows;
}

// open-room: no obstacles, used for collector sanity checks.
inline const std::vector<std::string>& layout_open_room() {
    static const std::vector<std::string> rows = {
        "#########",
        "#S......#",
        "#.......#",
        "#.......#",
        "#......G#",
        "#########",
    };
    return rows;
}

inline const std::map<std::string, const std::vector<std::string>*>& builtin_layouts() {
    static const std::map<std::string, const std::vector<std::string>*> m = {
        {"corridor-s", &layout_corridor_s()},
        {"junction-t", &layout_junction_t()},
        {"open-room", &layout_open_room()},
    };
    return m;
}

inline MazeSpec maze_from_layout_name(const std::string& name) {
    const auto& m = builtin_layouts();
    auto it = m.find(name);
    if (it == m.end()) {
        std::string valid;
        for (const auto& [k, v] : m) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError("unknown layout '" + name + "' (valid: " + valid + ")");
    }
    return make_maze(*it->second);
}

// ---------------------------------------------------------------------------
// scripted data collectors
// ---------------------------------------------------------------------------

struct CollectorConfig {
    double kp = 1.0;
    double kd = 0.6;
    double noise_sigma = 0.2;
    double switch_radius = 0.4;
    std::int64_t n_trajectories = 200;
    enum class Style { play, expert } style = Style::play;
};

inline std::string to_string(CollectorConfig::Style s) {
    return s == CollectorConfig::Style::play ? "play" : "expert";
}

inline CollectorConfig::Style style_from_string(const std::string& s) {
    if (s == "play") return CollectorConfig::Style::play;
    if (s == "expert") return CollectorConfig::Style::expert;
    throw ConfigError("unknown style '" + s + "' (valid: play, expert)");
}

struct DatasetAudit {
    std::int64_t n_trajectories = 0;
    double mean_length = 0;
    std::int64_t min_length = 0;
    std::int64_t max_length = 0;
    double success_fraction = 0;  // endpoint within success radius of the env goal
    double mean_return = 0;
};

namespace detail {

inline Cell cell_of(const MazeState& s) {
    return {static_cast<std::int64_t>(std::floor(s.x)), static_cast<std::int64_t>(std::floor(s.y))};
}

inline std::vector<Cell> free_cells(const MazeSpec& spec) {
    std::vector<Cell> cells;
    for (std::int64_t r = 0; r < spec.rows(); ++r)
        for (std::int64_t c = 0; c < spec.cols(); ++c)
            if (!spec.is_wall(c, r)) cells.push_back({c, r});
    return cells;
}

// PD controller toward successive waypoints with optional exploration noise.
struct WaypointFollower {
    std::vector<std::array<double, 2>> waypoints;
    std::size_t next = 0;

    bool finished() const { return next >= waypoints.size(); }

    std::array<double, 2> act(const MazeState& s, const CollectorConfig& cfg, RngStream& rng) {
        while (next + 1 < waypoints.size()) {
            double dx = waypoints[next][0] - s.x, dy = waypoints[next][1] - s.y;
            if (std::sqrt(dx * dx + dy * dy) > cfg.switch_radius) break;
            ++next;
        }
        const auto& w = waypoints[std::min(next, waypoints.size() - 1)];
        if (next + 1 == waypoints.size()) {
            double dx = w[0] - s.x, dy = w[1] - s.y;
            if (std::sqrt(dx * dx + dy * dy) <= cfg.switch_radius) next = waypoints.size();
        }
        double ax = cfg.kp * (w[0] - s.x) - cfg.kd * s.vx + rng.normal(0.0, cfg.noise_sigma);
        double ay = cfg.kp * (w[1] - s.y) - cfg.kd * s.vy + rng.normal(0.0, cfg.noise_sigma);
        return {std::clamp(ax, -1.0, 1.0), std::clamp(ay, -1.0, 1.0)};
    }
};

inline double maze_random_policy_return(const MazeSpec& spec, RngStream& rng) {
    double total = 0;
    for (int ep = 0; ep < 100; ++ep) {
        RngStream er = rng.split("random_ref", static_cast<std::uint64_t>(ep));
        MazeState s = maze_reset(spec, er);
        while (true) {
            auto r = maze_step(spec, s, er.uniform(-1.0, 1.0), er.uniform(-1.0, 1.0));
            total += r.reward;
            s = r.state;
            if (r.done) break;
        }
    }
    return total / 100.0;
}

inline double maze_expert_policy_return(const MazeSpec& spec, const CollectorConfig& cfg,
                                        RngStream& rng) {
    CollectorConfig quiet = cfg;
    quiet.noise_sigma = 0.0;
    double total = 0;
    for (int ep = 0; ep < 100; ++ep) {
        RngStream er = rng.split("expert_ref", static_cast<std::uint64_t>(ep));
        MazeState s = maze_reset(spec, er);
        WaypointFollower f{plan_waypoints(spec, cell_of(s), spec.goal_cell)};
        while (true) {
            auto [ax, ay] = f.act(s, quiet, er);
            auto r = maze_step(spec, s, ax, ay);
            total += r.reward;
            s = r.state;
            if (r.done) break;
        }
    }
    return total / 100.0;
}

}  // namespace detail

/// Rolls one maze episode under the scripted controller. Play style chains
/// random intermediate subgoals so single trajectories rarely solve the
/// whole task; expert style drives straight for the env goal.
inline Trajectory collect_maze_trajectory(const MazeSpec& spec, const CollectorConfig& cfg,
                                          RngStream& rng) {
    Trajectory traj;
    traj.rewards.emplace();
    MazeState s = maze_reset(spec, rng);
    auto cells = detail::free_cells(spec);
    detail::WaypointFollower follower;
    if (cfg.style == CollectorConfig::Style::expert)
        follower.waypoints = plan_waypoints(spec, detail::cell_of(s), spec.goal_cell);
    while (true) {
        if (cfg.style == CollectorConfig::Style::play && follower.finished()) {
            Cell sub = cells[rng.below(cells.size())];
            follower = detail::WaypointFollower{plan_waypoints(spec, detail::cell_of(s), sub)};
        }
        if (cfg.style == CollectorConfig::Style::expert && follower.finished())
            follower.next = follower.waypoints.size() - 1;  // hold position at the goal
        auto [ax, ay] = follower.act(s, cfg, rng);
        traj.states.push_back(s.observation());
        traj.actions.push_back({ax, ay});
        auto r = maze_step(spec, s, ax, ay);
        traj.rewards->push_back(r.reward);
        s = r.state;
        if (r.done) break;
    }
    return traj;
}

inline Trajectory collect_linerun_trajectory(const LineRunSpec& spec, const CollectorConfig& cfg,
                                             RngStream& rng) {
    Trajectory traj;
    traj.rewards.emplace();
    LineRunState s;
    // cubing skews the flip rate toward 0 so returns cover the whole range
    double u = rng.uniform();
    double flip_p = cfg.style == CollectorConfig::Style::expert ? 0.0 : 0.3 * u * u * u;
    double dir = 1.0;
    while (true) {
        if (rng.uniform() < flip_p) dir = -dir;
        double a = std::clamp(dir + rng.normal(0.0, cfg.noise_sigma), -1.0, 1.0);
        traj.states.push_back(s.observation());
        traj.actions.push_back({a});
        auto r = linerun_step(spec, s, a);
        traj.rewards->push_back(r.reward);
        s = r.state;
        if (r.done) break;
    }
    return traj;
}

inline DatasetAudit audit_trajectories(const MazeSpec* maze, const std::vector<Trajectory>& trajs) {
    DatasetAudit a;
    a.n_trajectories = static_cast<std::int64_t>(trajs.size());
    a.min_length = trajs.empty() ? 0 : trajs[0].length();
    for (const auto& t : trajs) {
        a.mean_length += static_cast<double>(t.length());
        a.min_length = std::min(a.min_length, t.length());
        a.max_length = std::max(a.max_length, t.length());
        double ret = 0;
        if (t.rewards)
            for (double r : *t.rewards) ret += r;
        a.mean_return += ret;
        if (maze)  // a maze episode ends in success iff its final reward is 1
            a.success_fraction += (t.rewards && !t.rewards->empty() && t.rewards->back() > 0) ? 1.0 : 0.0;
    }
    if (!trajs.empty()) {
        a.mean_length /= static_cast<double>(trajs.size());
        a.mean_return /= static_cast<double>(trajs.size());
        a.success_fraction /= static_cast<double>(trajs.size());
    }
    return a;
}

/// Generates a dataset directory in the trajectory_data format. Trajectory i
/// is fully determined by (seed, i).
inline DatasetAudit collect_dataset_minimaze(const MazeSpec& spec, const std::string& layout_name,
                                             const CollectorConfig& cfg, std::uint64_t seed,
                                             const std::filesystem::path& out) {
    RngStream root(seed);
    std::vector<Trajectory> trajs;
    trajs.reserve(static_cast<std::size_t>(cfg.n_trajectories));
    for (std::int64_t i = 0; i < cfg.n_trajectories; ++i) {
        RngStream tr = root.split("trajectory", static_cast<std::uint64_t>(i));
        trajs.push_back(collect_maze_trajectory(spec, cfg, tr));
    }
    DatasetMeta meta;
    meta.env_id = "minimaze";
    meta.state_dim = 4;
    meta.action_dim = 2;
    meta.max_episode_steps = spec.episode_cap;
    meta.goal_mode = GoalMode::target_state;
    meta.goal_subspace = {0, 1};
    RngStream ref = root.split("reference");
    meta.ref_score_random = detail::maze_random_policy_return(spec, ref);
    meta.ref_score_expert = detail::maze_expert_policy_return(spec, cfg, ref);
    meta.layout_name = layout_name;
    meta.layout = spec.layout;
    meta.split_seed = seed;
    save_dataset(out, meta, trajs);
    return audit_trajectories(&spec, trajs);
}

inline DatasetAudit collect_dataset_linerun(const LineRunSpec& spec, const CollectorConfig& cfg,
                                            std::uint64_t seed, const std::filesystem::path& out) {
    RngStream root(seed);
    std::vector<Trajectory> trajs;
    trajs.reserve(static_cast<std::size_t>(cfg.n_trajectories));
    for (std::int64_t i = 0; i < cfg.n_trajectories; ++i) {
        RngStream tr = root.split("trajectory", static_cast<std::uint64_t>(i));
        trajs.push_back(collect_linerun_trajectory(spec, cfg, tr));
    }
    DatasetMeta meta;
    meta.env_id = "linerun";
    meta.state_dim = 2;
    meta.action_dim = 1;
    meta.max_episode_steps = spec.horizon;
    meta.goal_mode = GoalMode::return_to_go;
    meta.goal_subspace = {};
    RngStream ref = root.split("reference");
    {
        double total = 0;
        for (int ep = 0; ep < 100; ++ep) {
            RngStream er = ref.split("random_ref", static_cast<std::uint64_t>(ep));
            LineRunState s;
            while (true) {
                auto r = linerun_step(spec, s, er.uniform(-1.0, 1.0));
                total += r.reward;
                s = r.state;
                if (r.done) break;
            }
        }
        meta.ref_score_random = total / 100.0;
    }
    {
        LineRunState s;
        double total = 0;
        while (true) {
            auto r = linerun_step(spec, s, 1.0);
            total += r.reward;
            s = r.state;
            if (r.done) break;
        }
        meta.ref_score_expert = total;
    }
    meta.layout_name = "";
    meta.layout = {};
    meta.split_seed = seed;
    save_dataset(out, meta, trajs);
    return audit_trajectories(nullptr, trajs);
}

}  // namespace gcpc
