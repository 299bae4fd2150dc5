#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>

#include "gcpc/envs.hpp"
#include "gcpc/eval.hpp"

using namespace gcpc;
namespace fs = std::filesystem;

TEST_CASE("best_of_last_k") {
    CHECK(best_of_last_k({10, 20, 30, 40, 50, 60}) == 60.0);
    CHECK(best_of_last_k({5, 1, 2, 3, 4, 0}) == 4.0);  // the 5 falls outside the window
    CHECK(best_of_last_k({7}) == 7.0);
    CHECK_THROWS_AS(best_of_last_k({}), std::invalid_argument);
}

TEST_CASE("aggregate_seeds") {
    AggregateReport r = aggregate_seeds({1, 2, 3, 4});
    CHECK(r.iqm == 2.5);
    CHECK(r.mean == 2.5);
    CHECK(r.median == 2.5);

    AggregateReport c = aggregate_seeds({7, 7, 7});
    CHECK(c.stddev == 0.0);
    CHECK(c.mean == 7.0);
    CHECK(c.median == 7.0);
    CHECK(c.iqm == 7.0);

    AggregateReport two = aggregate_seeds({0, 100});
    CHECK(two.mean == 50.0);
    CHECK(two.stddev == Catch::Approx(70.7106781).epsilon(1e-6));

    AggregateReport one = aggregate_seeds({33});
    CHECK(one.stddev == 0.0);
    CHECK(one.n_seeds == 1);
}

namespace {

// a policy whose output is a constant bias
PolicyBundle constant_policy_bundle(std::int64_t state_dim, std::int64_t goal_width,
                                    std::vector<double> bias) {
    PolicyConfig c;
    c.hidden_layers = 1;
    c.hidden_width = 4;
    c.conditioning = Conditioning::none;
    c.state_dim = state_dim;
    c.action_dim = static_cast<std::int64_t>(bias.size());
    c.goal_width = goal_width;
    c.cond_width = 0;
    RngStream rng(1);
    PolicyBundle b;
    b.policy = make_policy(c, rng);
    for (auto& l : b.policy.layers) {
        std::fill(l.weight.data().begin(), l.weight.data().end(), 0.0);
        std::fill(l.bias.data().begin(), l.bias.data().end(), 0.0);
    }
    std::copy(bias.begin(), bias.end(), b.policy.layers.back().bias.data().begin());
    b.stats.state_mean.assign(static_cast<std::size_t>(state_dim), 0.0);
    b.stats.state_std.assign(static_cast<std::size_t>(state_dim), 1.0);
    return b;
}

}  // namespace

TEST_CASE("maze rollout with the goal at the start succeeds immediately") {
    MazeSpec spec = maze_from_layout_name("open-room");
    PolicyBundle b = constant_policy_bundle(4, 2, {0.0, 0.0});
    RngStream rng(3);
    MazeState probe = maze_reset(spec, rng);
    RngStream rng2(3);  // same draw sequence puts the reset at the same spot
    EpisodeResult r = rollout_maze_episode(spec, b, {probe.x, probe.y}, rng2);
    CHECK(r.success);
    CHECK(r.total_reward == 1.0);
    CHECK(r.length == 1);
}

TEST_CASE("zero policy from rest fails at the cap with zero return") {
    MazeSpec spec = maze_from_layout_name("open-room");
    spec.episode_cap = 50;
    PolicyBundle b = constant_policy_bundle(4, 2, {0.0, 0.0});
    RngStream rng(4);
    EpisodeResult r = rollout_maze_episode(spec, b, spec.goal_pos, rng, true);
    CHECK(!r.success);
    CHECK(r.total_reward == 0.0);
    CHECK(r.length == 50);
    CHECK(static_cast<std::int64_t>(r.trace.size()) <= 50);
}

TEST_CASE("nan action aborts an episode as a failure") {
    MazeSpec spec = maze_from_layout_name("open-room");
    PolicyBundle b = constant_policy_bundle(4, 2, {std::nan(""), 0.0});
    RngStream rng(5);
    EpisodeResult r = rollout_maze_episode(spec, b, spec.goal_pos, rng);
    CHECK(r.nan_abort);
    CHECK(!r.success);
}

TEST_CASE("linerun normalized score anchors") {
    DatasetMeta meta;
    meta.env_id = "linerun";
    meta.state_dim = 2;
    meta.action_dim = 1;
    meta.max_episode_steps = 200;
    meta.goal_mode = GoalMode::return_to_go;
    meta.ref_score_random = 0.0;    // the do-nothing policy's exact return
    meta.ref_score_expert = 195.5;  // the always-accelerate return

    EvalConfig cfg;
    cfg.n_episodes = 3;

    PolicyBundle zero = constant_policy_bundle(2, 1, {0.0});
    CHECK(evaluate_bundle(zero, meta, cfg, 7) == 0.0);  // R == R_random

    PolicyBundle expert = constant_policy_bundle(2, 1, {1.0});
    CHECK(evaluate_bundle(expert, meta, cfg, 7) == Catch::Approx(100.0).margin(1e-9));
}

TEST_CASE("evaluation is independent of the episode schedule") {
    MazeSpec spec = maze_from_layout_name("open-room");
    DatasetMeta meta;
    meta.env_id = "minimaze";
    meta.state_dim = 4;
    meta.action_dim = 2;
    meta.max_episode_steps = 40;
    meta.goal_mode = GoalMode::target_state;
    meta.goal_subspace = {0, 1};
    meta.layout = spec.layout;

    PolicyBundle b = constant_policy_bundle(4, 2, {0.3, 0.3});
    EvalConfig cfg;
    cfg.n_episodes = 8;
    double serial = evaluate_bundle(b, meta, cfg, 11);
    ::setenv("GCPC_THREADS", "3", 1);
    double parallel = evaluate_bundle(b, meta, cfg, 11);
    ::unsetenv("GCPC_THREADS");
    CHECK(serial == parallel);
}

TEST_CASE("protocol invariant: chosen score is never below the final checkpoint") {
    RngStream rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> scores;
        std::size_t n = 1 + rng.below(9);
        for (std::size_t i = 0; i < n; ++i) scores.push_back(rng.uniform(0, 100));
        CHECK(best_of_last_k(scores) >= scores.back());
    }
}
