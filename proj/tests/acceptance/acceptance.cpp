// Acceptance suite: each numbered criterion prints one PASS/FAIL line.
//
//   acceptance                  runs every criterion
//   acceptance --criterion N    runs one
//
// Exit code 0 iff every executed criterion passes.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gcpc/adam.hpp"
#include "gcpc/data.hpp"
#include "gcpc/envs.hpp"
#include "gcpc/eval.hpp"
#include "gcpc/mask.hpp"
#include "gcpc/nn.hpp"
#include "gcpc/policy.hpp"
#include "gcpc/rng.hpp"
#include "gcpc/tensor.hpp"
#include "gcpc/trajnet.hpp"
#include "support/finite_diff.hpp"

using namespace gcpc;
namespace fs = std::filesystem;
using gcpc::testing::GradCheck;
using gcpc::testing::check_tensor_grad;

namespace {

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("gcpc_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

bool check(std::ostream& out, bool ok, const std::string& what) {
    if (!ok) out << "    failed: " << what << "\n";
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 1: gradient suite
// ---------------------------------------------------------------------------

bool criterion_gradients(std::ostream& out) {
    Stopwatch sw;
    GradCheck gc;
    std::int64_t configs = 0;
    RngStream master(20240801);

    auto rand_dim = [](RngStream& r, std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(hi - lo + 1)));
    };

    // elementwise ops under broadcast
    for (int trial = 0; trial < 15; ++trial, ++configs) {
        RngStream r = master.split("ew", configs);
        std::int64_t m = rand_dim(r, 1, 4), n = rand_dim(r, 1, 4);
        Tensor a = Tensor::randn({m, n}, 1.0, r, true);
        Tensor b = Tensor::randn({n}, 1.0, r, true);
        EwOp op = static_cast<EwOp>(r.below(3));
        auto run = [&](Tape* t) { return sum(t, elementwise(t, op, a, b)); };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        check_tensor_grad(gc, a, loss);
        check_tensor_grad(gc, b, loss);
    }
    // matmul (plain and batched)
    for (int trial = 0; trial < 15; ++trial, ++configs) {
        RngStream r = master.split("mm", configs);
        std::int64_t m = rand_dim(r, 1, 4), k = rand_dim(r, 1, 4), n = rand_dim(r, 1, 4);
        bool batched = r.below(2) == 1;
        Tensor a = batched ? Tensor::randn({2, m, k}, 1.0, r, true) : Tensor::randn({m, k}, 1.0, r, true);
        Tensor b = batched ? Tensor::randn({2, k, n}, 1.0, r, true) : Tensor::randn({k, n}, 1.0, r, true);
        auto run = [&](Tape* t) { return sum(t, matmul(t, a, b)); };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        check_tensor_grad(gc, a, loss);
        check_tensor_grad(gc, b, loss);
    }
    // softmax and layer norm
    for (int trial = 0; trial < 10; ++trial, ++configs) {
        RngStream r = master.split("sm", configs);
        std::int64_t m = rand_dim(r, 1, 4), n = rand_dim(r, 2, 5);
        Tensor x = Tensor::randn({m, n}, 2.0, r, true);
        Tensor w = Tensor::randn({m, n}, 1.0, r);
        auto run = [&](Tape* t) { return sum(t, mul(t, softmax_lastdim(t, x), w)); };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        check_tensor_grad(gc, x, loss);
    }
    for (int trial = 0; trial < 10; ++trial, ++configs) {
        RngStream r = master.split("ln", configs);
        std::int64_t m = rand_dim(r, 1, 4), n = rand_dim(r, 2, 6);
        Tensor x = Tensor::randn({m, n}, 1.5, r, true);
        Tensor g = Tensor::randn({n}, 0.5, r, true);
        Tensor b = Tensor::randn({n}, 0.5, r, true);
        Tensor w = Tensor::randn({m, n}, 1.0, r);
        auto run = [&](Tape* t) { return sum(t, mul(t, layer_norm(t, x, g, b), w)); };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        check_tensor_grad(gc, x, loss);
        check_tensor_grad(gc, g, loss);
        check_tensor_grad(gc, b, loss);
    }
    // activations and mse
    for (int trial = 0; trial < 10; ++trial, ++configs) {
        RngStream r = master.split("act", configs);
        std::int64_t n = rand_dim(r, 1, 8);
        Tensor x = Tensor::randn({n}, 1.0, r, true);
        bool use_gelu = r.below(2) == 1;
        auto run = [&](Tape* t) {
            return sum(t, use_gelu ? gelu(t, x) : relu(t, add(t, x, 0.5)));
        };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        check_tensor_grad(gc, x, loss);
    }
    for (int trial = 0; trial < 5; ++trial, ++configs) {
        RngStream r = master.split("mse", configs);
        std::int64_t m = rand_dim(r, 2, 4), n = rand_dim(r, 1, 3);
        Tensor p = Tensor::randn({m, n}, 1.0, r, true);
        Tensor tg = Tensor::randn({m, n}, 1.0, r);
        Tensor w = Tensor::zeros({m});
        for (std::int64_t i = 0; i < m; ++i) w.data()[i] = r.below(2) ? 1.0 : 0.0;
        w.data()[0] = 1.0;
        auto run = [&](Tape* t) { return mse_loss(t, p, tg, &w); };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        check_tensor_grad(gc, p, loss);
    }
    // linear, attention, full block
    for (int trial = 0; trial < 10; ++trial, ++configs) {
        RngStream r = master.split("lin", configs);
        std::int64_t in = rand_dim(r, 1, 5), outw = rand_dim(r, 1, 5), rows = rand_dim(r, 1, 4);
        LinearParams p = make_linear(outw, in, r);
        Tensor x = Tensor::randn({rows, in}, 1.0, r, true);
        Tensor w = Tensor::randn({rows, outw}, 1.0, r);
        auto run = [&](Tape* t) { return sum(t, mul(t, linear_forward(t, p, x), w)); };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        check_tensor_grad(gc, p.weight, loss);
        check_tensor_grad(gc, p.bias, loss);
        check_tensor_grad(gc, x, loss);
    }
    for (int trial = 0; trial < 8; ++trial, ++configs) {
        RngStream r = master.split("attn", configs);
        std::int64_t h = 1 + static_cast<std::int64_t>(r.below(2));
        std::int64_t d = h * rand_dim(r, 2, 4);
        std::int64_t T = rand_dim(r, 1, 4);
        AttentionParams p = make_attention(d, h, r);
        Tensor x = Tensor::randn({T, d}, 1.0, r, true);
        Tensor w = Tensor::randn({T, d}, 1.0, r);
        auto run = [&](Tape* t) { return sum(t, mul(t, multi_head_attention(t, p, x), w)); };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        check_tensor_grad(gc, x, loss);
        check_tensor_grad(gc, p.wq.weight, loss);
        check_tensor_grad(gc, p.wv.bias, loss);
    }
    for (int trial = 0; trial < 6; ++trial, ++configs) {
        RngStream r = master.split("block", configs);
        std::int64_t h = 2, d = 8, T = rand_dim(r, 2, 3);
        BlockParams b = make_block(d, h, r);
        Tensor x = Tensor::randn({1, T, d}, 1.0, r, true);
        Tensor w = Tensor::randn({1, T, d}, 1.0, r);
        RngStream drop(0);
        auto run = [&](Tape* t) {
            return sum(t, mul(t, transformer_block(t, b, x, nullptr, 0.0, drop, false), w));
        };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        check_tensor_grad(gc, x, loss);
        check_tensor_grad(gc, b.fc1.weight, loss);
        check_tensor_grad(gc, b.ln1.gain, loss);
        check_tensor_grad(gc, b.attn.wo.weight, loss);
    }

    // full TrajNet losses over randomized small configs
    for (int trial = 0; trial < 6; ++trial, ++configs) {
        RngStream r = master.split("trajnet", configs);
        TrajNetConfig c;
        c.d_model = 8;
        c.n_heads = 2;
        c.encoder_layers = 2;
        c.decoder_layers = 1;
        c.n_slots = 1 + static_cast<std::int64_t>(r.below(2));
        c.k = 2 + static_cast<std::int64_t>(r.below(2));
        c.p = 1 + static_cast<std::int64_t>(r.below(2));
        c.objective = static_cast<Objective>(r.below(5));
        c.dropout = 0.0;
        c.state_dim = 2;
        c.action_dim = 1;
        c.goal_conditioning = r.below(2) == 1;
        c.include_actions = r.below(2) == 1;
        c.goal_width = c.goal_conditioning ? 1 : 0;
        TrajNet m = make_trajnet(c, r);

        Dataset ds;
        ds.meta.state_dim = 2;
        ds.meta.action_dim = 1;
        ds.meta.max_episode_steps = 16;
        ds.meta.goal_mode = GoalMode::target_state;
        ds.meta.goal_subspace = {0};
        Trajectory tr;
        for (int i = 0; i < 10; ++i) {
            tr.states.push_back({r.normal(), r.normal()});
            tr.actions.push_back({r.normal()});
        }
        ds.trajectories = {tr};
        ds.train_indices = {0};
        NormStats stats;
        stats.state_mean = {0, 0};
        stats.state_std = {1, 1};

        std::vector<TrainingSample> batch;
        for (int i = 0; i < 2; ++i)
            batch.push_back(make_training_sample(c, ds, stats, 0, 4 + i, r));
        RngStream drop(0);
        auto run = [&](Tape* t) { return trajnet_batch_loss(t, m, batch, drop, false); };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        for (auto& [name, tensor] : m.named_params()) check_tensor_grad(gc, tensor, loss);
    }
    // full policy losses
    for (int trial = 0; trial < 6; ++trial, ++configs) {
        RngStream r = master.split("policy", configs);
        PolicyConfig c;
        c.hidden_layers = 2;
        c.hidden_width = 4 + static_cast<std::int64_t>(r.below(5));
        c.state_dim = 3;
        c.action_dim = 2;
        c.goal_width = 1;
        c.cond_width = static_cast<std::int64_t>(r.below(5));
        c.conditioning = c.cond_width == 0 ? Conditioning::none : Conditioning::bottleneck;
        Policy p = make_policy(c, r);
        Tensor x = Tensor::randn({3, c.input_width()}, 1.0, r);
        Tensor tg = Tensor::randn({3, 2}, 1.0, r);
        auto run = [&](Tape* t) { return mse_loss(t, policy_forward(t, p, x), tg); };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] { Tape t; return run(&t).item(); };
        for (auto& [name, tensor] : p.named_params()) check_tensor_grad(gc, tensor, loss);
    }

    double elapsed = sw.seconds();
    out << "    " << configs << " randomized configs, " << gc.n_checked
        << " partial derivatives, max rel err " << gc.max_rel_err << ", " << elapsed << " s\n";
    bool ok = true;
    ok &= check(out, configs >= 100, "at least 100 randomized configurations");
    ok &= check(out, gc.max_rel_err <= 1e-5, "relative error <= 1e-5");
    ok &= check(out, elapsed < 120.0, "runtime < 2 min");
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 2: masking exactness
// ---------------------------------------------------------------------------

bool criterion_masking(std::ostream& out) {
    bool ok = true;
    const std::int64_t k = 10, p = 7;
    for (auto obj : {Objective::ae_h, Objective::mae_h, Objective::mae_f, Objective::mae_rc,
                     Objective::mae_all}) {
        RngStream root(7000 + static_cast<std::uint64_t>(obj));
        for (int trial = 0; trial < 1000; ++trial) {
            RngStream probe = root.split("trial", static_cast<std::uint64_t>(trial));
            // seeded oracle: replay the documented draw order
            std::int64_t expect_idx = 0;
            if (objective_has_random_segment(obj)) {
                RngStream oracle = root.split("trial", static_cast<std::uint64_t>(trial));
                expect_idx = static_cast<std::int64_t>(oracle.below(5));
            }
            MaskSpec s = build_mask(obj, k, p, probe);
            std::int64_t span = objective_has_future(obj) ? k + p : k;
            ok &= s.span() == span;
            std::int64_t hist = 0, fut = 0;
            for (std::int64_t i = 0; i < k; ++i) hist += s.input_mask[static_cast<std::size_t>(i)];
            for (std::int64_t i = k; i < s.span(); ++i) fut += s.input_mask[static_cast<std::size_t>(i)];
            std::int64_t expect_hist = (2 * expect_idx * k + 5) / 10;
            std::int64_t expect_fut_random = (2 * expect_idx * p + 5) / 10;
            switch (obj) {
                case Objective::ae_h: ok &= hist == 0; break;
                case Objective::mae_h: ok &= hist == expect_hist; break;
                case Objective::mae_f: ok &= hist == 0 && fut == p; break;
                case Objective::mae_rc: ok &= hist == expect_hist && fut == p; break;
                case Objective::mae_all: ok &= hist == expect_hist && fut == expect_fut_random; break;
            }
            for (std::int64_t i = 0; i < s.span(); ++i)
                ok &= s.recon_target[static_cast<std::size_t>(i)] == 1;
            if (!ok) {
                out << "    layout mismatch for " << to_string(obj) << " at trial " << trial << "\n";
                return false;
            }
        }
    }
    out << "    5 objectives x 1000 seeded trials match the objective table\n";

    RngStream root(424242);
    std::array<std::int64_t, 5> counts{};
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        RngStream r = root.split("ratio", static_cast<std::uint64_t>(i));
        MaskSpec s = build_mask(Objective::mae_rc, 10, 5, r);
        counts[static_cast<std::size_t>(std::llround(s.ratio / 0.2))] += 1;
    }
    for (std::size_t i = 0; i < 5; ++i) {
        double freq = static_cast<double>(counts[i]) / n;
        ok &= check(out, freq > 0.18 && freq < 0.22,
                    "ratio " + std::to_string(0.2 * static_cast<double>(i)) + " frequency in [0.18, 0.22]");
    }
    out << "    dynamic ratio uniform within +-2% over 1e5 draws\n";
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 3: goal sampling exactness
// ---------------------------------------------------------------------------

bool criterion_goals(std::ostream& out) {
    bool ok = true;
    RngStream root(31415);
    double max_err = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        RngStream r = root.split("rtg", static_cast<std::uint64_t>(trial));
        std::int64_t H = 1 + static_cast<std::int64_t>(r.below(40));
        std::int64_t h_max = H + static_cast<std::int64_t>(r.below(20));
        Trajectory tr;
        tr.rewards.emplace();
        for (std::int64_t i = 0; i < H; ++i) {
            tr.states.push_back({r.normal(), r.normal()});
            tr.actions.push_back({0.0});
            tr.rewards->push_back(r.normal(0, 3));
        }
        std::int64_t t = 1 + static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(H)));
        Goal g = sample_goal(tr, t, GoalMode::return_to_go, {}, h_max, r);
        double acc = 0;
        for (std::int64_t i = H; i >= t; --i) acc += (*tr.rewards)[static_cast<std::size_t>(i - 1)];
        max_err = std::max(max_err, std::abs(g.rtg - acc / static_cast<double>(h_max - t + 1)));
    }
    ok &= check(out, max_err <= 1e-12, "rtg exactness within 1e-12");
    out << "    rtg max deviation " << max_err << " over 1e4 randomized trajectories\n";

    for (int trial = 0; trial < 10000; ++trial) {
        RngStream r = root.split("target", static_cast<std::uint64_t>(trial));
        std::int64_t H = 2 + static_cast<std::int64_t>(r.below(30));
        Trajectory tr;
        for (std::int64_t i = 0; i < H; ++i) {
            tr.states.push_back({r.normal(), r.normal(), r.normal()});
            tr.actions.push_back({0.0});
        }
        std::int64_t t = 1 + static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(H - 1)));
        Goal g = sample_goal(tr, t, GoalMode::target_state, {0, 2}, H, r);
        bool found = false;
        for (std::int64_t j = t + 1; j <= H; ++j) {
            const auto& s = tr.states[static_cast<std::size_t>(j - 1)];
            found = found || (g.target[0] == s[0] && g.target[1] == s[2]);
        }
        if (!found) {
            out << "    target goal not a future state slice at trial " << trial << "\n";
            return false;
        }
    }
    out << "    target goals always match a future state slice (1e4 trials)\n";
    return ok;
}

// ---------------------------------------------------------------------------
// shared fixtures for the training criteria
// ---------------------------------------------------------------------------

Dataset corridor_play_dataset(const fs::path& dir, std::int64_t n, std::uint64_t seed) {
    MazeSpec spec = maze_from_layout_name("corridor-s");
    CollectorConfig cfg;
    cfg.n_trajectories = n;
    cfg.style = CollectorConfig::Style::play;
    collect_dataset_minimaze(spec, "corridor-s", cfg, seed, dir);
    return load_dataset(dir);
}

TrajNetConfig desk_trajnet_config(Objective obj) {
    TrajNetConfig c;
    c.d_model = 64;
    c.n_heads = 4;
    c.n_slots = 4;
    c.k = 10;
    c.p = 40;
    c.objective = obj;
    c.dropout = 0.1;
    c.learning_rate = 1e-3;
    c.epochs = 20;
    c.batch_size = 256;
    c.samples_per_epoch = 2048;
    c.val_samples = 512;
    c.reconstruction_subspace = {0, 1};
    return c;
}

// ---------------------------------------------------------------------------
// criterion 4: training sanity
// ---------------------------------------------------------------------------

bool criterion_training_sanity(std::ostream& out) {
    Stopwatch sw;
    fs::path work = scratch_dir("c4");
    Dataset ds = corridor_play_dataset(work / "data", 200, 12345);
    TrajNetConfig cfg = desk_trajnet_config(Objective::mae_rc);
    cfg.epochs = 20;
    TrajNetRunResult r = train_trajnet(cfg, ds, 7, work / "run");
    double first = r.val_losses.front();
    double last = r.val_losses.back();
    double elapsed = sw.seconds();
    out << "    epoch-1 val " << first << ", epoch-20 val " << last << ", ratio " << last / first
        << ", " << elapsed << " s\n";
    bool ok = check(out, last <= 0.5 * first, "final val MSE <= 0.5 x epoch-1 val MSE");
    ok &= check(out, elapsed < 300.0, "runtime < 5 min");
    fs::remove_all(work);
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 5: goal-conditioning direction
// ---------------------------------------------------------------------------

bool criterion_goal_conditioning(std::ostream& out) {
    Stopwatch sw;
    fs::path work = scratch_dir("c5");
    MazeSpec spec = maze_from_layout_name("junction-t");
    CollectorConfig ccfg;
    ccfg.n_trajectories = 200;
    ccfg.style = CollectorConfig::Style::play;
    collect_dataset_minimaze(spec, "junction-t", ccfg, 999, work / "data");
    Dataset ds = load_dataset(work / "data");

    bool ok = true;
    for (std::uint64_t seed : {1, 2, 3}) {
        TrajNetConfig cfg = desk_trajnet_config(Objective::mae_f);
        cfg.k = 5;
        cfg.p = 30;
        cfg.epochs = 8;
        TrajNetRunResult with_gc = train_trajnet(cfg, ds, seed, work / ("gc_" + std::to_string(seed)));
        cfg.goal_conditioning = false;
        TrajNetRunResult no_gc = train_trajnet(cfg, ds, seed, work / ("nogc_" + std::to_string(seed)));
        double w = with_gc.val_losses.back(), wo = no_gc.val_losses.back();
        out << "    seed " << seed << ": val(GC) " << w << " vs val(no GC) " << wo << " (ratio "
            << w / wo << ")\n";
        ok &= check(out, w <= 0.9 * wo,
                    "seed " + std::to_string(seed) + ": GC val loss >= 10% lower");
    }
    double elapsed = sw.seconds();
    out << "    " << elapsed << " s\n";
    ok &= check(out, elapsed < 600.0, "runtime < 10 min");
    fs::remove_all(work);
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 6: end-to-end ordering
// ---------------------------------------------------------------------------

struct MethodScore {
    std::string name;
    double mean_chosen = 0;
};

double run_method_seed(const fs::path& work, const Dataset& ds, const DatasetMeta& meta,
                       Objective obj, Conditioning cond, std::uint64_t seed, std::ostream& out) {
    fs::path run_dir = work / (to_string(cond) + "_" + to_string(obj) + "_" + std::to_string(seed));
    std::optional<fs::path> trajnet_path;
    const NormStats* stats_ptr = nullptr;
    NormStats trajnet_stats;
    std::optional<TrajNet> trajnet;
    if (cond != Conditioning::none) {
        TrajNetConfig tc = desk_trajnet_config(obj);
        tc.epochs = 8;
        TrajNetRunResult tr = train_trajnet(tc, ds, seed, run_dir / "trajnet");
        trajnet_path = run_dir / "trajnet" / "checkpoints" / "best.gcpc";
        LoadedTrajNet loaded = load_trajnet(*trajnet_path);
        trajnet = std::move(loaded.model);
        trajnet_stats = loaded.stats;
        stats_ptr = &trajnet_stats;
    }
    PolicyConfig pc;
    pc.hidden_width = 256;
    pc.learning_rate = 1e-3;
    pc.epochs = 10;
    pc.batch_size = 256;
    pc.samples_per_epoch = 2048;
    pc.conditioning = cond;
    PolicyRunResult pr = train_policy(pc, trajnet ? &*trajnet : nullptr, ds, seed,
                                      run_dir / "policy", nullptr, stats_ptr);
    EvalConfig ec;
    ec.n_episodes = 25;
    RunRecord rec = evaluate_run(pr.retained_checkpoints, trajnet_path, meta, ec, seed);
    out << "      seed " << seed << " scores:";
    for (double s : rec.checkpoint_scores) out << " " << s;
    out << " -> chosen " << rec.chosen_score << "\n";
    return rec.chosen_score;
}

bool criterion_end_to_end(std::ostream& out) {
    Stopwatch sw;
    fs::path work = scratch_dir("c6");
    Dataset ds = corridor_play_dataset(work / "data", 200, 4242);
    DatasetMeta meta = ds.meta;

    auto mean_over_seeds = [&](Objective obj, Conditioning cond, const char* label) {
        out << "    " << label << ":\n";
        double acc = 0;
        for (std::uint64_t seed : {1, 2, 3})
            acc += run_method_seed(work, ds, meta, obj, cond, seed, out);
        return acc / 3.0;
    };

    double gcpc = mean_over_seeds(Objective::mae_rc, Conditioning::bottleneck, "GCPC (MAE-RC bottleneck)");
    double bc = mean_over_seeds(Objective::mae_rc, Conditioning::none, "goal-conditioned BC");
    double mae_h = mean_over_seeds(Objective::mae_h, Conditioning::bottleneck, "MAE-H bottleneck");

    double elapsed = sw.seconds();
    out << "    mean best-of-last-5: GCPC " << gcpc << ", BC " << bc << ", MAE-H " << mae_h << " ("
        << elapsed << " s)\n";
    bool ok = check(out, gcpc >= bc + 10.0, "GCPC >= BC + 10 points");
    ok &= check(out, gcpc >= mae_h, "MAE-RC >= MAE-H");
    ok &= check(out, elapsed < 1800.0, "runtime < 30 min");
    fs::remove_all(work);
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 7: latent/explicit consistency
// ---------------------------------------------------------------------------

bool criterion_latent_explicit(std::ostream& out) {
    bool ok = true;
    {
        TrajNetConfig c;
        c.d_model = 16;
        c.n_heads = 2;
        c.n_slots = 2;
        c.k = 4;
        c.p = 6;
        c.state_dim = 4;
        c.action_dim = 2;
        c.goal_width = 2;
        c.dropout = 0.0;
        c.reconstruction_subspace = {0, 1};
        RngStream rng(55);
        TrajNet m = make_trajnet(c, rng);
        EncoderInput in;
        for (int i = 0; i < 16; ++i) in.hist_states.push_back(0.07 * i - 0.5);
        in.goal = {0.2, -0.3};
        Bottleneck b = encode(m, in);
        Tensor full = decode(m, b);
        Tensor fut = decode_explicit_future(m, b);
        bool exact = fut.shape() == Shape{6, 2};
        for (std::int64_t i = 0; exact && i < fut.numel(); ++i)
            exact = fut.data()[i] == full.data()[c.k * 2 + i];
        ok &= check(out, exact, "decode_explicit_future equals the decoder future slice bit-exactly");
    }

    fs::path work = scratch_dir("c7");
    MazeSpec spec = maze_from_layout_name("open-room");
    CollectorConfig ccfg;
    ccfg.n_trajectories = 24;
    ccfg.style = CollectorConfig::Style::expert;
    collect_dataset_minimaze(spec, "open-room", ccfg, 77, work / "data");
    Dataset ds = load_dataset(work / "data");

    TrajNetConfig tc;
    tc.d_model = 16;
    tc.n_heads = 2;
    tc.n_slots = 2;
    tc.k = 4;
    tc.p = 6;
    tc.epochs = 2;
    tc.batch_size = 64;
    tc.samples_per_epoch = 256;
    tc.val_samples = 64;
    tc.reconstruction_subspace = {0, 1};
    tc.learning_rate = 1e-3;
    train_trajnet(tc, ds, 5, work / "trajnet");
    fs::path tn = work / "trajnet" / "checkpoints" / "best.gcpc";
    LoadedTrajNet loaded = load_trajnet(tn);

    for (Conditioning cond : {Conditioning::bottleneck, Conditioning::explicit_future}) {
        PolicyConfig pc;
        pc.hidden_width = 32;
        pc.epochs = 2;
        pc.batch_size = 64;
        pc.samples_per_epoch = 256;
        pc.conditioning = cond;
        fs::path run = work / ("policy_" + to_string(cond));
        try {
            PolicyRunResult pr =
                train_policy(pc, &loaded.model, ds, 5, run, nullptr, &loaded.stats);
            EvalConfig ec;
            ec.n_episodes = 3;
            RunRecord rec = evaluate_run(pr.retained_checkpoints, tn, ds.meta, ec, 5);
            out << "    " << to_string(cond) << " smoke run trained and evaluated (chosen "
                << rec.chosen_score << ")\n";
        } catch (const std::exception& e) {
            ok &= check(out, false, to_string(cond) + std::string(" smoke run: ") + e.what());
        }
    }
    fs::remove_all(work);
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 8: protocol unit checks
// ---------------------------------------------------------------------------

bool criterion_protocol(std::ostream& out) {
    bool ok = true;
    ok &= check(out, best_of_last_k({10, 20, 30, 40, 50, 60}) == 60.0, "best of rising sequence");
    ok &= check(out, best_of_last_k({5, 1, 2, 3, 4, 0}) == 4.0, "early peak excluded");
    ok &= check(out, best_of_last_k({7}) == 7.0, "singleton list");
    AggregateReport r = aggregate_seeds({1, 2, 3, 4});
    ok &= check(out, r.iqm == 2.5, "IQM([1,2,3,4]) == 2.5");
    AggregateReport c = aggregate_seeds({9, 9, 9});
    ok &= check(out, c.stddev == 0 && c.mean == 9 && c.median == 9 && c.iqm == 9,
                "constant scores aggregate");
    AggregateReport two = aggregate_seeds({0, 100});
    ok &= check(out, two.mean == 50 && std::abs(two.stddev - 70.71067811865476) < 1e-9,
                "two-seed mean/std");
    AggregateReport one = aggregate_seeds({42});
    ok &= check(out, one.stddev == 0.0 && one.n_seeds == 1, "single seed std reported as 0");
    out << "    protocol examples reproduced\n";
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 9: pipeline determinism (through the CLI)
// ---------------------------------------------------------------------------

int run_cli(const std::string& args) {
    std::string cmd = std::string(GCPC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
}

bool criterion_determinism(std::ostream& out) {
    fs::path work = scratch_dir("c9");
    fs::path cfg_path = work / "config.json";
    {
        std::ofstream f(cfg_path);
        f << R"({"env": {"name": "minimaze", "layout": "open-room", "episode_cap": 60},
                 "data": {"n_trajectories": 24, "style": "expert"},
                 "trajnet": {"d_model": 16, "n_heads": 2, "n_slots": 2, "k": 4, "p": 6,
                              "epochs": 2, "batch_size": 64, "samples_per_epoch": 128,
                              "val_samples": 64, "learning_rate": 0.001,
                              "reconstruction_subspace": [0, 1]},
                 "policy": {"hidden_width": 32, "epochs": 6, "batch_size": 64,
                             "samples_per_epoch": 128},
                 "eval": {"n_episodes": 4}})";
    }
    ::setenv("GCPC_THREADS", "1", 1);
    auto pipeline = [&](const fs::path& root) {
        fs::create_directories(root);
        std::string c = cfg_path.string();
        if (run_cli("gen-data --env minimaze --layout open-room --style expert --cap 60 --n 24 --seed 3 --out " +
                    (root / "data").string()) != 0)
            return false;
        if (run_cli("train-trajnet --config " + c + " --data " + (root / "data").string() +
                    " --seed 3 --out " + (root / "trajnet").string()) != 0)
            return false;
        if (run_cli("train-policy --config " + c + " --data " + (root / "data").string() +
                    " --trajnet " + (root / "trajnet" / "checkpoints" / "best.gcpc").string() +
                    " --conditioning bottleneck --seed 3 --out " + (root / "policy").string()) != 0)
            return false;
        if (run_cli("eval --run " + (root / "policy").string() + " --episodes 4 --seeds 0 1") != 0)
            return false;
        return true;
    };
    bool ok = true;
    ok &= check(out, pipeline(work / "a"), "pipeline run A completes");
    ok &= check(out, pipeline(work / "b"), "pipeline run B completes");
    if (ok) {
        ok &= check(out,
                    slurp(work / "a" / "policy" / "metrics.jsonl") ==
                        slurp(work / "b" / "policy" / "metrics.jsonl"),
                    "policy metrics.jsonl byte-identical");
        ok &= check(out,
                    slurp(work / "a" / "trajnet" / "metrics.jsonl") ==
                        slurp(work / "b" / "trajnet" / "metrics.jsonl"),
                    "trajnet metrics.jsonl byte-identical");
        ok &= check(out,
                    slurp(work / "a" / "policy" / "report.json") ==
                        slurp(work / "b" / "policy" / "report.json"),
                    "report.json byte-identical");
        out << "    full pipeline reproduced byte-identically under GCPC_THREADS=1\n";
    }
    fs::remove_all(work);
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 10: checkpoint round-trips and rejection
// ---------------------------------------------------------------------------

bool criterion_checkpoints(std::ostream& out) {
    bool ok = true;
    fs::path work = scratch_dir("c10");

    TrajNetConfig tc;
    tc.d_model = 16;
    tc.n_heads = 2;
    tc.n_slots = 2;
    tc.k = 4;
    tc.p = 6;
    tc.state_dim = 4;
    tc.action_dim = 2;
    tc.goal_width = 2;
    tc.dropout = 0.0;
    tc.reconstruction_subspace = {0, 1};
    RngStream rng(6);
    TrajNet m = make_trajnet(tc, rng);
    NormStats st;
    st.state_mean = {0, 0, 0, 0};
    st.state_std = {1, 1, 1, 1};
    fs::path tn_path = work / "t.gcpc";
    save_trajnet(tn_path, m, st, nullptr);
    LoadedTrajNet back = load_trajnet(tn_path);
    EncoderInput in;
    for (int i = 0; i < 16; ++i) in.hist_states.push_back(0.03 * i);
    in.goal = {0.1, 0.9};
    Bottleneck b1 = encode(m, in);
    Bottleneck b2 = encode(back.model, in);
    bool exact = true;
    for (std::int64_t i = 0; i < b1.numel(); ++i) exact &= b1.data()[i] == b2.data()[i];
    Tensor d1 = decode(m, b1), d2 = decode(back.model, b2);
    for (std::int64_t i = 0; i < d1.numel(); ++i) exact &= d1.data()[i] == d2.data()[i];
    ok &= check(out, exact, "trajnet save -> load -> forward bit-exact");

    PolicyConfig pc;
    pc.hidden_width = 8;
    pc.state_dim = 4;
    pc.action_dim = 2;
    pc.goal_width = 2;
    pc.cond_width = 32;
    RngStream prng(7);
    Policy p = make_policy(pc, prng);
    fs::path pol_path = work / "p.gcpc";
    save_policy(pol_path, p, st, nullptr);
    LoadedPolicy pback = load_policy(pol_path);
    Tensor x = Tensor::randn({2, pc.input_width()}, 1.0, prng);
    Tensor a1 = policy_forward(nullptr, p, x);
    Tensor a2 = policy_forward(nullptr, pback.policy, x);
    bool pexact = true;
    for (std::int64_t i = 0; i < a1.numel(); ++i) pexact &= a1.data()[i] == a2.data()[i];
    ok &= check(out, pexact, "policy save -> load -> forward bit-exact");

    // corruptions
    fs::path bad_magic = work / "bad_magic.gcpc";
    fs::copy_file(tn_path, bad_magic);
    {
        std::fstream f(bad_magic, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    bool threw = false;
    try {
        load_checkpoint(bad_magic);
    } catch (const FormatError&) {
        threw = true;
    }
    ok &= check(out, threw, "corrupted magic raises the format error");

    fs::path truncated = work / "trunc.gcpc";
    fs::copy_file(tn_path, truncated);
    fs::resize_file(truncated, fs::file_size(truncated) - 32);
    threw = false;
    try {
        load_checkpoint(truncated);
    } catch (const FormatError&) {
        threw = true;
    }
    ok &= check(out, threw, "truncated payload raises the format error");

    // the CLI maps these to exit code 3
    int rc = std::system((std::string(GCPC_CLI_PATH) + " viz-future --trajnet " + bad_magic.string() +
                          " --data /nonexistent --index 0 --t 1 --out /tmp/x.csv >/dev/null 2>&1")
                             .c_str());
    ok &= check(out, WEXITSTATUS(rc) == 3, "CLI exits with code 3 on a corrupted checkpoint");
    out << "    round-trips bit-exact; corrupt files rejected\n";
    fs::remove_all(work);
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    std::map<int, std::pair<std::string, std::function<bool(std::ostream&)>>> criteria = {
        {1, {"gradient suite vs central finite differences", criterion_gradients}},
        {2, {"masking exactness and dynamic-ratio uniformity", criterion_masking}},
        {3, {"goal-sampling exactness", criterion_goals}},
        {4, {"training sanity on corridor-s", criterion_training_sanity}},
        {5, {"goal-conditioning lowers predictive validation loss", criterion_goal_conditioning}},
        {6, {"end-to-end ordering: GCPC vs BC vs MAE-H", criterion_end_to_end}},
        {7, {"latent/explicit future consistency", criterion_latent_explicit}},
        {8, {"protocol unit checks", criterion_protocol}},
        {9, {"pipeline determinism", criterion_determinism}},
        {10, {"checkpoint round-trip and rejection", criterion_checkpoints}},
    };

    int only = -1;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
    }

    bool all_ok = true;
    for (const auto& [id, entry] : criteria) {
        if (only > 0 && id != only) continue;
        std::ostringstream detail;
        bool ok = false;
        try {
            ok = entry.second(detail);
        } catch (const std::exception& e) {
            detail << "    exception: " << e.what() << "\n";
        }
        std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << entry.first << "\n"
                  << detail.str();
        std::cout.flush();
        all_ok &= ok;
    }
    return all_ok ? 0 : 1;
}
