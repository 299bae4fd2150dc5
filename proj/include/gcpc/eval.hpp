#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gcpc/data.hpp"
#include "gcpc/envs.hpp"
#include "gcpc/errors.hpp"
#include "gcpc/policy.hpp"
#include "gcpc/trajnet.hpp"

namespace gcpc {

// ---------------------------------------------------------------------------
// protocol pieces
// ---------------------------------------------------------------------------

/// Max over the final min(k, len) entries.
inline double best_of_last_k(const std::vector<double>& scores, std::size_t k = 5) {
    if (scores.empty()) throw std::invalid_argument("best_of_last_k: empty score list");
    std::size_t n = scores.size();
    std::size_t from = n > k ? n - k : 0;
    double best = scores[from];
    for (std::size_t i = from; i < n; ++i) best = std::max(best, scores[i]);
    return best;
}

struct RunRecord {
    std::uint64_t seed = 0;
    std::vector<double> checkpoint_scores;  // one per retained checkpoint, oldest first
    double chosen_score = 0;                // max over the last five
};

struct AggregateReport {
    double mean = 0;
    double stddev = 0;  // sample std (n-1), 0 when n == 1
    double median = 0;
    double iqm = 0;  // mean of the middle 50%, dropping floor(n/4) per end
    std::int64_t n_seeds = 0;
};

inline AggregateReport aggregate_seeds(std::vector<double> scores) {
    if (scores.empty()) throw std::invalid_argument("aggregate_seeds: no scores");
    AggregateReport r;
    r.n_seeds = static_cast<std::int64_t>(scores.size());
    double n = static_cast<double>(scores.size());
    for (double s : scores) r.mean += s;
    r.mean /= n;
    if (scores.size() > 1) {
        double acc = 0;
        for (double s : scores) acc += (s - r.mean) * (s - r.mean);
        r.stddev = std::sqrt(acc / (n - 1.0));
    }
    std::sort(scores.begin(), scores.end());
    std::size_t m = scores.size();
    r.median = m % 2 == 1 ? scores[m / 2] : 0.5 * (scores[m / 2 - 1] + scores[m / 2]);
    std::size_t drop = m / 4;
    double acc = 0;
    for (std::size_t i = drop; i < m - drop; ++i) acc += scores[i];
    r.iqm = acc / static_cast<double>(m - 2 * drop);
    return r;
}

inline nlohmann::json aggregate_to_json(const AggregateReport& r) {
    return nlohmann::json{
        {"mean", r.mean}, {"std", r.stddev}, {"median", r.median}, {"iqm", r.iqm}, {"n_seeds", r.n_seeds}};
}

// ---------------------------------------------------------------------------
// rollouts
// ---------------------------------------------------------------------------

/// Everything needed to act in an environment: the policy, its normalization
/// stats, and (unless conditioning is none) the frozen TrajNet.
struct PolicyBundle {
    Policy policy;
    NormStats stats;
    std::optional<TrajNet> trajnet;

    Conditioning conditioning() const { return policy.cfg.conditioning; }
};

inline PolicyBundle load_policy_bundle(const std::filesystem::path& policy_path,
                                       const std::optional<std::filesystem::path>& trajnet_path) {
    PolicyBundle b;
    LoadedPolicy lp = load_policy(policy_path);
    b.policy = std::move(lp.policy);
    b.stats = std::move(lp.stats);
    if (b.policy.cfg.conditioning != Conditioning::none) {
        if (!trajnet_path)
            throw DataError("policy conditioning '" + to_string(b.policy.cfg.conditioning) +
                            "' needs a trajnet checkpoint");
        b.trajnet = load_trajnet(*trajnet_path).model;
        if (conditioning_width(b.policy.cfg.conditioning, &*b.trajnet) != b.policy.cfg.cond_width)
            throw DataError("trajnet checkpoint does not match the policy's conditioning width");
    }
    return b;
}

struct EpisodeResult {
    double total_reward = 0;
    bool success = false;
    bool nan_abort = false;
    std::int64_t length = 0;
    std::vector<std::vector<double>> trace;  // states, filled when keep_trace
};

namespace detail {

// k-length (state, executed action) ring, initialized by repeating the first
// observation.
struct HistoryRing {
    std::deque<std::vector<double>> states;
    std::deque<std::vector<double>> actions;  // action taken at each state
    std::size_t k;
    std::size_t action_dim;

    HistoryRing(std::size_t k_, std::size_t action_dim_, const std::vector<double>& s0)
        : k(k_), action_dim(action_dim_) {
        for (std::size_t i = 0; i < k; ++i) {
            states.push_back(s0);
            actions.push_back(std::vector<double>(action_dim, 0.0));
        }
    }
    void push(const std::vector<double>& s, const std::vector<double>& executed) {
        actions.back() = executed;  // fills the slot that acting just resolved
        states.push_back(s);
        actions.push_back(std::vector<double>(action_dim, 0.0));
        states.pop_front();
        actions.pop_front();
    }
};

inline std::vector<double> policy_action(const PolicyBundle& b, const HistoryRing& ring,
                                         const std::vector<double>& goal_norm) {
    const PolicyConfig& cfg = b.policy.cfg;
    std::vector<double> input;
    input.reserve(static_cast<std::size_t>(cfg.input_width()));
    std::vector<double> s_t = ring.states.back();
    normalize_state(b.stats, s_t);
    input.insert(input.end(), s_t.begin(), s_t.end());
    input.insert(input.end(), goal_norm.begin(), goal_norm.end());
    if (cfg.conditioning != Conditioning::none) {
        EncoderInput in;
        for (const auto& s : ring.states) {
            std::vector<double> n = s;
            normalize_state(b.stats, n);
            in.hist_states.insert(in.hist_states.end(), n.begin(), n.end());
        }
        if (b.trajnet->cfg.include_actions) {
            for (const auto& a : ring.actions)
                in.hist_actions.insert(in.hist_actions.end(), a.begin(), a.end());
            in.action_mask.assign(static_cast<std::size_t>(b.trajnet->cfg.k), 0);
            in.action_mask.back() = 1;  // current action is being decided
        }
        if (b.trajnet->cfg.goal_conditioning) in.goal = goal_norm;
        Bottleneck bn = encode(*b.trajnet, in);
        std::vector<double> cond = conditioning_vector(cfg, &*b.trajnet, &bn);
        input.insert(input.end(), cond.begin(), cond.end());
    }
    Tensor x = Tensor::from({1, cfg.input_width()}, std::move(input));
    Tensor a = policy_forward(nullptr, b.policy, x);
    return std::vector<double>(a.data().begin(), a.data().end());
}

}  // namespace detail

/// One maze episode: push s_t, encode the unmasked history, act, clip, step.
/// A non-finite action aborts the episode as a failure.
inline EpisodeResult rollout_maze_episode(const MazeSpec& base_spec, const PolicyBundle& bundle,
                                          const std::array<double, 2>& goal_pos, RngStream& rng,
                                          bool keep_trace = false) {
    MazeSpec spec = base_spec;
    spec.goal_pos = goal_pos;  // success is judged against the conditioned goal
    Goal goal;
    goal.mode = GoalMode::target_state;
    goal.target = {goal_pos[0], goal_pos[1]};
    std::vector<double> goal_norm = normalize_goal(bundle.stats, goal, {0, 1});

    MazeState s = maze_reset(spec, rng);
    std::size_t k = bundle.trajnet ? static_cast<std::size_t>(bundle.trajnet->cfg.k) : 1;
    detail::HistoryRing ring(k, 2, s.observation());
    EpisodeResult out;
    while (true) {
        std::vector<double> a = detail::policy_action(bundle, ring, goal_norm);
        for (double v : a)
            if (!std::isfinite(v)) {
                out.nan_abort = true;
                out.success = false;
                return out;
            }
        auto r = maze_step(spec, s, a[0], a[1]);
        out.total_reward += r.reward;
        out.length += 1;
        if (keep_trace) out.trace.push_back(s.observation());
        s = r.state;
        if (r.done) {
            out.success = r.reward > 0;
            break;
        }
        ring.push(s.observation(), a);
    }
    return out;
}

inline EpisodeResult rollout_linerun_episode(const LineRunSpec& spec, const PolicyBundle& bundle,
                                             double target_return, RngStream& rng) {
    (void)rng;  // linerun has a deterministic start
    Goal goal;
    goal.mode = GoalMode::return_to_go;
    // conditioning is in average-return units: total / constant horizon
    goal.rtg = target_return / static_cast<double>(spec.horizon);
    std::vector<double> goal_norm = normalize_goal(bundle.stats, goal, {});

    LineRunState s;
    std::size_t k = bundle.trajnet ? static_cast<std::size_t>(bundle.trajnet->cfg.k) : 1;
    detail::HistoryRing ring(k, 1, s.observation());
    EpisodeResult out;
    while (true) {
        std::vector<double> a = detail::policy_action(bundle, ring, goal_norm);
        if (!std::isfinite(a[0])) {
            out.nan_abort = true;
            return out;
        }
        auto r = linerun_step(spec, s, a[0]);
        out.total_reward += r.reward;
        out.length += 1;
        s = r.state;
        if (r.done) break;
        ring.push(s.observation(), a);
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint evaluation
// ---------------------------------------------------------------------------

struct EvalConfig {
    std::int64_t n_episodes = 100;
    // linerun conditions on the expert reference return unless overridden
    std::optional<double> target_return;
};

inline std::size_t eval_threads() {
    const char* env = std::getenv("GCPC_THREADS");
    if (!env) return 1;
    long v = std::strtol(env, nullptr, 10);
    return v > 1 ? static_cast<std::size_t>(v) : 1;
}

/// Episode scores use independent split streams, so the result does not
/// depend on evaluation order or thread count.
inline double evaluate_bundle(const PolicyBundle& bundle, const DatasetMeta& meta,
                              const EvalConfig& cfg, std::uint64_t seed) {
    if (cfg.n_episodes < 1) throw ConfigError("eval: n_episodes must be >= 1");
    RngStream root(seed);
    std::vector<double> per_episode(static_cast<std::size_t>(cfg.n_episodes), 0.0);

    auto run_range = [&](std::int64_t lo, std::int64_t hi) {
        if (meta.env_id == "minimaze") {
            MazeSpec spec = make_maze(meta.layout);
            spec.episode_cap = meta.max_episode_steps;
            for (std::int64_t i = lo; i < hi; ++i) {
                RngStream er = root.split("episode", static_cast<std::uint64_t>(i));
                EpisodeResult r = rollout_maze_episode(spec, bundle, spec.goal_pos, er);
                per_episode[static_cast<std::size_t>(i)] = r.success ? 1.0 : 0.0;
            }
        } else if (meta.env_id == "linerun") {
            LineRunSpec spec;
            spec.horizon = meta.max_episode_steps;
            double target = cfg.target_return.value_or(meta.ref_score_expert);
            for (std::int64_t i = lo; i < hi; ++i) {
                RngStream er = root.split("episode", static_cast<std::uint64_t>(i));
                EpisodeResult r = rollout_linerun_episode(spec, bundle, target, er);
                per_episode[static_cast<std::size_t>(i)] = r.total_reward;
            }
        } else {
            throw DataError("evaluate: unknown env_id '" + meta.env_id + "'");
        }
    };

    std::size_t threads = std::min<std::size_t>(eval_threads(), per_episode.size());
    if (threads <= 1) {
        run_range(0, cfg.n_episodes);
    } else {
        std::vector<std::thread> pool;
        std::int64_t chunk = (cfg.n_episodes + static_cast<std::int64_t>(threads) - 1) /
                             static_cast<std::int64_t>(threads);
        for (std::size_t t = 0; t < threads; ++t) {
            std::int64_t lo = static_cast<std::int64_t>(t) * chunk;
            std::int64_t hi = std::min<std::int64_t>(cfg.n_episodes, lo + chunk);
            if (lo < hi) pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    // fixed reduction order regardless of scheduling
    double acc = 0;
    for (double v : per_episode) acc += v;
    double mean = acc / static_cast<double>(cfg.n_episodes);
    if (meta.env_id == "minimaze") return 100.0 * mean;
    if (meta.ref_score_expert == meta.ref_score_random)
        throw DataError("evaluate: degenerate reference scores");
    return 100.0 * (mean - meta.ref_score_random) / (meta.ref_score_expert - meta.ref_score_random);
}

/// Evaluates the retained checkpoints of one training run under one seed.
inline RunRecord evaluate_run(const std::vector<std::filesystem::path>& checkpoints,
                              const std::optional<std::filesystem::path>& trajnet_path,
                              const DatasetMeta& meta, const EvalConfig& cfg, std::uint64_t seed) {
    if (checkpoints.empty()) throw DataError("evaluate_run: no checkpoints");
    RunRecord rec;
    rec.seed = seed;
    for (const auto& ck : checkpoints) {
        PolicyBundle bundle = load_policy_bundle(ck, trajnet_path);
        rec.checkpoint_scores.push_back(evaluate_bundle(bundle, meta, cfg, seed));
    }
    rec.chosen_score = best_of_last_k(rec.checkpoint_scores, 5);
    return rec;
}

}  // namespace gcpc
