#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gcpc/data.hpp"
#include "gcpc/envs.hpp"
#include "gcpc/errors.hpp"
#include "gcpc/policy.hpp"
#include "gcpc/trajnet.hpp"

namespace gcpc {

/// A decoded latent future for one (trajectory, timestep) anchor.
struct FutureViz {
    std::int64_t t = 0;                           // anchor timestep (1-based)
    std::vector<std::int64_t> future_timesteps;   // t+1 .. t+p
    Tensor decoded;                               // [p, recon_width], denormalized
    std::vector<std::vector<double>> history;     // raw history states (k rows)
    std::vector<double> goal;                     // raw goal vector, empty when omitted
};

/// Encodes trajectory `index`'s unmasked history at timestep `t` and decodes
/// the future from the bottleneck. The goal is the trajectory's endpoint
/// slice (target mode) or its return-to-go (rtg mode); `use_goal = false`
/// omits the goal token.
inline FutureViz compute_future_viz(const TrajNet& m, const NormStats& stats, const Dataset& ds,
                                    std::int64_t index, std::int64_t t, bool use_goal) {
    if (index < 0 || index >= static_cast<std::int64_t>(ds.trajectories.size()))
        throw ConfigError("viz: trajectory index out of range (dataset has " +
                          std::to_string(ds.trajectories.size()) + ")");
    const Trajectory& tr = ds.trajectories[static_cast<std::size_t>(index)];
    if (t < 1 || t > tr.length())
        throw ConfigError("viz: timestep out of range (trajectory length " +
                          std::to_string(tr.length()) + ")");
    if (!objective_has_future(m.cfg.objective))
        throw DataError("viz: objective '" + to_string(m.cfg.objective) + "' has no future window");

    WindowSample w = sample_window(tr, t, m.cfg.k, 0);
    FutureViz out;
    out.t = t;
    out.history = w.history;

    EncoderInput in;
    for (const auto& s : w.history) {
        std::vector<double> n = s;
        normalize_state(stats, n);
        in.hist_states.insert(in.hist_states.end(), n.begin(), n.end());
    }
    if (m.cfg.include_actions) {
        for (std::size_t i = 0; i + 1 < w.history_actions.size(); ++i)
            in.hist_actions.insert(in.hist_actions.end(), w.history_actions[i].begin(),
                                   w.history_actions[i].end());
        in.hist_actions.insert(in.hist_actions.end(), static_cast<std::size_t>(m.cfg.action_dim), 0.0);
        in.action_mask.assign(static_cast<std::size_t>(m.cfg.k), 0);
        in.action_mask.back() = 1;
    }
    if (m.cfg.goal_conditioning && use_goal) {
        Goal g;
        g.mode = ds.meta.goal_mode;
        if (g.mode == GoalMode::target_state) {
            const auto& last = tr.states.back();
            for (auto d : ds.meta.goal_subspace) g.target.push_back(last[static_cast<std::size_t>(d)]);
            out.goal = g.target;
        } else {
            g.rtg = compute_rtg(tr, t, ds.meta.max_episode_steps);
            out.goal = {g.rtg};
        }
        in.goal = normalize_goal(stats, g, ds.meta.goal_subspace);
    } else {
        in.omit_goal = true;
    }

    Bottleneck b = encode(m, in);
    out.decoded = decode_explicit_future(m, b, &stats);
    for (std::int64_t i = 1; i <= m.cfg.p; ++i) out.future_timesteps.push_back(t + i);
    return out;
}

/// CSV: header t,dim0,dim1,... then exactly p denormalized rows.
inline void write_future_csv(const std::filesystem::path& path, const FutureViz& viz) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    std::int64_t w = viz.decoded.dim(1);
    f << "t";
    for (std::int64_t d = 0; d < w; ++d) f << ",dim" << d;
    f << "\n";
    char buf[64];
    for (std::int64_t r = 0; r < viz.decoded.dim(0); ++r) {
        f << viz.future_timesteps[static_cast<std::size_t>(r)];
        for (std::int64_t d = 0; d < w; ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g", viz.decoded.data()[r * w + d]);
            f << "," << buf;
        }
        f << "\n";
    }
}

/// SVG overlay: one rect per wall cell, the history and decoded-future
/// polylines, and a goal marker.
inline void write_future_svg(const std::filesystem::path& path, const MazeSpec& spec,
                             const FutureViz& viz) {
    if (viz.decoded.dim(1) < 2)
        throw DataError("svg: needs at least two reconstructed dims for (x, y)");
    const double s = 32.0;  // pixels per cell
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    double W = static_cast<double>(spec.cols()) * s;
    double H = static_cast<double>(spec.rows()) * s;
    f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    f << "  <rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H
      << "\" fill=\"white\" stroke=\"none\"/>\n";
    for (std::int64_t r = 0; r < spec.rows(); ++r)
        for (std::int64_t c = 0; c < spec.cols(); ++c)
            if (spec.is_wall(c, r))
                f << "  <rect class=\"wall\" x=\"" << static_cast<double>(c) * s << "\" y=\""
                  << static_cast<double>(r) * s << "\" width=\"" << s << "\" height=\"" << s
                  << "\" fill=\"#444444\"/>\n";
    auto polyline = [&](const char* color, auto&& points) {
        f << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"3\" points=\"";
        bool first = true;
        for (const auto& [x, y] : points) {
            if (!first) f << " ";
            f << x * s << "," << y * s;
            first = false;
        }
        f << "\"/>\n";
    };
    std::vector<std::pair<double, double>> hist;
    for (const auto& st : viz.history) hist.emplace_back(st[0], st[1]);
    polyline("#1f6fd0", hist);
    std::vector<std::pair<double, double>> fut;
    std::int64_t w = viz.decoded.dim(1);
    for (std::int64_t r = 0; r < viz.decoded.dim(0); ++r)
        fut.emplace_back(viz.decoded.data()[r * w], viz.decoded.data()[r * w + 1]);
    polyline("#2aa05a", fut);
    if (viz.goal.size() >= 2)
        f << "  <circle cx=\"" << viz.goal[0] * s << "\" cy=\"" << viz.goal[1] * s
          << "\" r=\"" << 0.3 * s << "\" fill=\"#d03a2f\"/>\n";
    f << "</svg>\n";
}

}  // namespace gcpc
