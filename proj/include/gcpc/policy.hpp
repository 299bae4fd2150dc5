#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcpc/adam.hpp"
#include "gcpc/checkpoint.hpp"
#include "gcpc/data.hpp"
#include "gcpc/errors.hpp"
#include "gcpc/nn.hpp"
#include "gcpc/trajnet.hpp"

namespace gcpc {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

enum class Conditioning { bottleneck, explicit_future, none };

inline std::string to_string(Conditioning c) {
    switch (c) {
        case Conditioning::bottleneck: return "bottleneck";
        case Conditioning::explicit_future: return "explicit-future";
        case Conditioning::none: return "none";
    }
    return "?";
}

inline Conditioning conditioning_from_string(const std::string& s) {
    if (s == "bottleneck") return Conditioning::bottleneck;
    if (s == "explicit-future" || s == "explicit_future") return Conditioning::explicit_future;
    if (s == "none") return Conditioning::none;
    throw ConfigError("unknown conditioning '" + s + "' (valid: bottleneck, explicit-future, none)");
}

struct PolicyConfig {
    std::int64_t hidden_layers = 2;
    std::int64_t hidden_width = 256;
    double learning_rate = 1e-3;
    std::int64_t epochs = 20;
    std::int64_t batch_size = 256;
    std::int64_t samples_per_epoch = 2048;
    Conditioning conditioning = Conditioning::bottleneck;

    // resolved
    std::int64_t state_dim = 0;
    std::int64_t action_dim = 0;
    std::int64_t goal_width = 0;
    std::int64_t cond_width = 0;

    std::int64_t input_width() const { return state_dim + goal_width + cond_width; }

    void validate() const {
        if (hidden_width < 1) throw ConfigError("policy: hidden_width must be >= 1");
        if (hidden_layers < 1) throw ConfigError("policy: hidden_layers must be >= 1");
    }
};

inline nlohmann::json policy_config_to_json(const PolicyConfig& c) {
    nlohmann::json j;
    j["hidden_layers"] = c.hidden_layers;
    j["hidden_width"] = c.hidden_width;
    j["learning_rate"] = c.learning_rate;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["samples_per_epoch"] = c.samples_per_epoch;
    j["conditioning"] = to_string(c.conditioning);
    j["state_dim"] = c.state_dim;
    j["action_dim"] = c.action_dim;
    j["goal_width"] = c.goal_width;
    j["cond_width"] = c.cond_width;
    return j;
}

inline PolicyConfig policy_config_from_json(const nlohmann::json& j) {
    PolicyConfig c;
    c.hidden_layers = j.at("hidden_layers").get<std::int64_t>();
    c.hidden_width = j.at("hidden_width").get<std::int64_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<std::int64_t>();
    c.batch_size = j.at("batch_size").get<std::int64_t>();
    c.samples_per_epoch = j.at("samples_per_epoch").get<std::int64_t>();
    c.conditioning = conditioning_from_string(j.at("conditioning").get<std::string>());
    c.state_dim = j.at("state_dim").get<std::int64_t>();
    c.action_dim = j.at("action_dim").get<std::int64_t>();
    c.goal_width = j.at("goal_width").get<std::int64_t>();
    c.cond_width = j.at("cond_width").get<std::int64_t>();
    return c;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

/// ReLU MLP from (s_t, g, conditioning) to a continuous action.
struct Policy {
    PolicyConfig cfg;
    std::vector<LinearParams> layers;  // hidden..., output

    NamedParams named_params() const {
        NamedParams np;
        for (std::size_t i = 0; i < layers.size(); ++i)
            register_params(np, "mlp." + std::to_string(i), layers[i]);
        return np;
    }
};

inline Policy make_policy(const PolicyConfig& cfg, RngStream& rng) {
    cfg.validate();
    if (cfg.state_dim < 1 || cfg.action_dim < 1) throw ConfigError("policy: dims unresolved");
    Policy p;
    p.cfg = cfg;
    std::int64_t in = cfg.input_width();
    for (std::int64_t i = 0; i < cfg.hidden_layers; ++i) {
        p.layers.push_back(make_linear(cfg.hidden_width, in, rng));
        in = cfg.hidden_width;
    }
    p.layers.push_back(make_linear(cfg.action_dim, in, rng));
    return p;
}

inline Tensor policy_forward(Tape* tape, const Policy& p, const Tensor& input) {
    if (input.shape().back() != p.cfg.input_width())
        throw std::invalid_argument("policy_forward: input width " + std::to_string(input.shape().back()) +
                                    " does not match layout " + std::to_string(p.cfg.input_width()));
    Tensor h = input;
    for (std::size_t i = 0; i + 1 < p.layers.size(); ++i)
        h = relu(tape, linear_forward(tape, p.layers[i], h));
    return linear_forward(tape, p.layers.back(), h);
}

// ---------------------------------------------------------------------------
// explicit future decoding
// ---------------------------------------------------------------------------

/// The decoder's future slice for a bottleneck: rows k..k+p of decode(B).
/// Normalized by default; pass stats to denormalize into state space.
inline Tensor decode_explicit_future(const TrajNet& m, const Bottleneck& bottleneck,
                                     const NormStats* denorm_stats = nullptr) {
    if (m.decoder.empty()) throw DataError("decode_explicit_future: checkpoint has no decoder");
    if (!objective_has_future(m.cfg.objective))
        throw DataError("decode_explicit_future: objective '" + to_string(m.cfg.objective) +
                        "' reconstructs no future window");
    Tensor full = decode(m, bottleneck);  // [T_rec, w]
    Tensor fut = Tensor::zeros({m.cfg.p, m.cfg.recon_width()});
    std::copy(full.data().begin() + m.cfg.k * m.cfg.recon_width(), full.data().end(),
              fut.data().begin());
    if (denorm_stats) denormalize_dims(*denorm_stats, fut.data(), m.cfg.recon_dims());
    return fut;
}

// ---------------------------------------------------------------------------
// policy input assembly
// ---------------------------------------------------------------------------

/// Flattened conditioning block for one bottleneck, matching cond_width.
inline std::vector<double> conditioning_vector(const PolicyConfig& cfg, const TrajNet* m,
                                               const Bottleneck* bottleneck) {
    switch (cfg.conditioning) {
        case Conditioning::none:
            return {};
        case Conditioning::bottleneck:
            return std::vector<double>(bottleneck->data().begin(), bottleneck->data().end());
        case Conditioning::explicit_future: {
            Tensor fut = decode_explicit_future(*m, *bottleneck);
            return std::vector<double>(fut.data().begin(), fut.data().end());
        }
    }
    return {};
}

inline std::int64_t conditioning_width(Conditioning c, const TrajNet* m) {
    switch (c) {
        case Conditioning::none:
            return 0;
        case Conditioning::bottleneck:
            if (!m) throw ConfigError("policy: bottleneck conditioning needs a trajnet checkpoint");
            return m->cfg.n_slots * m->cfg.d_model;
        case Conditioning::explicit_future:
            if (!m) throw ConfigError("policy: explicit-future conditioning needs a trajnet checkpoint");
            return m->cfg.p * m->cfg.recon_width();
    }
    return 0;
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

inline void save_policy(const std::filesystem::path& path, const Policy& p, const NormStats& stats,
                        const AdamState* opt) {
    Checkpoint ck;
    ck.component = "POLICY";
    ck.config = policy_config_to_json(p.cfg);
    ck.extra["norm_stats"] = norm_stats_to_json(stats);
    ck.tensors = p.named_params();
    ck.extra["has_optimizer"] = opt != nullptr;
    if (opt) {
        ck.extra["optimizer"] = {{"step", opt->step},
                                 {"lr", opt->cfg.lr},
                                 {"beta1", opt->cfg.beta1},
                                 {"beta2", opt->cfg.beta2},
                                 {"eps", opt->cfg.eps}};
        NamedParams base = p.named_params();
        for (std::size_t i = 0; i < base.size(); ++i) {
            ck.tensors.emplace_back("adam.m." + base[i].first, opt->m[i]);
            ck.tensors.emplace_back("adam.v." + base[i].first, opt->v[i]);
        }
    }
    save_checkpoint(path, ck);
}

struct LoadedPolicy {
    Policy policy;
    NormStats stats;
};

inline LoadedPolicy load_policy(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.component != "POLICY")
        throw FormatError("checkpoint " + path.string() + " is '" + ck.component + "', expected POLICY");
    LoadedPolicy out;
    PolicyConfig cfg = policy_config_from_json(ck.config);
    RngStream rng(0);
    out.policy = make_policy(cfg, rng);
    NamedParams params = out.policy.named_params();
    if (ck.extra.value("has_optimizer", false)) {
        if (ck.tensors.size() != 3 * params.size())
            throw FormatError("checkpoint: optimizer table size mismatch");
        Checkpoint head;
        head.tensors.assign(ck.tensors.begin(), ck.tensors.begin() + static_cast<std::ptrdiff_t>(params.size()));
        load_into_params(head, params);
    } else {
        load_into_params(ck, params);
    }
    out.stats = norm_stats_from_json(ck.extra.at("norm_stats"));
    return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct PolicyRunResult {
    std::vector<std::filesystem::path> retained_checkpoints;  // oldest..newest, at most 5
    double first_epoch_loss = 0;
    double final_epoch_loss = 0;
};

/// Stage 2: regresses a_t from (s_t, g, conditioning) with the TrajNet
/// frozen; the encoder runs outside the tape so no gradient can reach it.
/// `trajnet_stats`, when given, overrides the dataset statistics so inputs
/// are normalized exactly as the frozen encoder saw them.
inline PolicyRunResult train_policy(const PolicyConfig& config, const TrajNet* trajnet,
                                    const Dataset& ds, std::uint64_t seed,
                                    const std::filesystem::path& run_dir,
                                    std::ostream* progress = nullptr,
                                    const NormStats* trajnet_stats = nullptr) {
    PolicyConfig cfg = config;
    cfg.state_dim = ds.meta.state_dim;
    cfg.action_dim = ds.meta.action_dim;
    cfg.goal_width = ds.meta.goal_width();
    cfg.cond_width = conditioning_width(cfg.conditioning, trajnet);
    cfg.validate();
    if (cfg.conditioning != Conditioning::none) {
        if (trajnet->cfg.state_dim != ds.meta.state_dim)
            throw DataError("train_policy: trajnet state_dim " + std::to_string(trajnet->cfg.state_dim) +
                            " does not match dataset state_dim " + std::to_string(ds.meta.state_dim));
        if (trajnet->cfg.goal_conditioning && trajnet->cfg.goal_width != ds.meta.goal_width())
            throw DataError("train_policy: trajnet goal width does not match dataset");
    }

    std::filesystem::create_directories(run_dir / "checkpoints");
    std::ofstream metrics(run_dir / "metrics.jsonl", std::ios::app);
    if (!metrics) throw DataError("cannot write metrics.jsonl in " + run_dir.string());

    RngStream root(seed);
    RngStream init = root.split("init");
    Policy policy = make_policy(cfg, init);
    // Normalization must match what the frozen encoder was trained with.
    NormStats stats = trajnet_stats ? *trajnet_stats : compute_norm_stats(ds);
    NamedParams named = policy.named_params();
    std::vector<Tensor> params = param_tensors(named);
    AdamState opt = make_adam_state(params, {.lr = cfg.learning_rate});

    std::int64_t k = trajnet ? trajnet->cfg.k : 1;
    bool needs_future = ds.meta.goal_mode == GoalMode::target_state;

    PolicyRunResult result;
    std::int64_t steps_per_epoch = (cfg.samples_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
    std::int64_t global_step = 0;
    for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double epoch_loss = 0;
        std::int64_t epoch_samples = 0;
        for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
            std::int64_t take = std::min<std::int64_t>(cfg.batch_size,
                                                       cfg.samples_per_epoch - step * cfg.batch_size);
            if (take <= 0) break;
            std::vector<EncoderInput> enc_inputs;
            std::vector<std::vector<double>> states_norm, goals_norm;
            Tensor actions = Tensor::zeros({take, cfg.action_dim});
            enc_inputs.reserve(static_cast<std::size_t>(take));
            for (std::int64_t i = 0; i < take; ++i) {
                RngStream s = root.split("sample",
                                         static_cast<std::uint64_t>((epoch - 1) * cfg.samples_per_epoch +
                                                                    step * cfg.batch_size + i));
                auto [ti, t] = draw_anchor(ds, ds.train_indices, needs_future, s);
                const Trajectory& tr = ds.trajectories[ti];
                Goal goal = sample_goal(tr, t, ds.meta.goal_mode, ds.meta.goal_subspace,
                                        ds.meta.max_episode_steps, s);
                goals_norm.push_back(normalize_goal(stats, goal, ds.meta.goal_subspace));
                std::vector<double> st = tr.states[static_cast<std::size_t>(t - 1)];
                normalize_state(stats, st);
                states_norm.push_back(std::move(st));
                const auto& a = tr.actions[static_cast<std::size_t>(t - 1)];
                std::copy(a.begin(), a.end(), actions.data().begin() + i * cfg.action_dim);
                if (cfg.conditioning != Conditioning::none) {
                    WindowSample w = sample_window(tr, t, k, 0);
                    EncoderInput in;
                    for (const auto& hs : w.history) {
                        std::vector<double> n = hs;
                        normalize_state(stats, n);
                        in.hist_states.insert(in.hist_states.end(), n.begin(), n.end());
                    }
                    if (trajnet->cfg.include_actions) {
                        // a_t is the regression target: its token is masked out
                        for (std::size_t hi = 0; hi + 1 < w.history_actions.size(); ++hi)
                            in.hist_actions.insert(in.hist_actions.end(),
                                                   w.history_actions[hi].begin(),
                                                   w.history_actions[hi].end());
                        in.hist_actions.insert(in.hist_actions.end(),
                                               static_cast<std::size_t>(cfg.action_dim), 0.0);
                        in.action_mask.assign(static_cast<std::size_t>(k), 0);
                        in.action_mask.back() = 1;
                    }
                    if (trajnet->cfg.goal_conditioning) in.goal = goals_norm.back();
                    enc_inputs.push_back(std::move(in));
                }
            }

            Tensor input = Tensor::zeros({take, cfg.input_width()});
            if (cfg.conditioning != Conditioning::none) {
                RngStream frozen_rng(0);
                Tensor bn = encode_batch(nullptr, *trajnet, enc_inputs, frozen_rng, false);
                Tensor cond;
                if (cfg.conditioning == Conditioning::bottleneck) {
                    cond = reshape(nullptr, bn, {take, cfg.cond_width});
                } else {
                    DecodeOut out = decode_batch(nullptr, *trajnet, bn, frozen_rng, false);
                    Tensor fut = slice_dim1(nullptr, out.states, trajnet->cfg.k, trajnet->cfg.p);
                    cond = reshape(nullptr, fut, {take, cfg.cond_width});
                }
                for (std::int64_t i = 0; i < take; ++i) {
                    double* row = input.data().data() + i * cfg.input_width();
                    const auto& sv = states_norm[static_cast<std::size_t>(i)];
                    const auto& gv = goals_norm[static_cast<std::size_t>(i)];
                    std::copy(sv.begin(), sv.end(), row);
                    std::copy(gv.begin(), gv.end(), row + cfg.state_dim);
                    const double* cv = cond.data().data() + i * cfg.cond_width;
                    std::copy(cv, cv + cfg.cond_width, row + cfg.state_dim + cfg.goal_width);
                }
            } else {
                for (std::int64_t i = 0; i < take; ++i) {
                    double* row = input.data().data() + i * cfg.input_width();
                    const auto& sv = states_norm[static_cast<std::size_t>(i)];
                    const auto& gv = goals_norm[static_cast<std::size_t>(i)];
                    std::copy(sv.begin(), sv.end(), row);
                    std::copy(gv.begin(), gv.end(), row + cfg.state_dim);
                }
            }

            Tape tape;
            for (auto& t : params) t.zero_grad();
            Tensor pred = policy_forward(&tape, policy, input);
            Tensor loss = mse_loss(&tape, pred, actions);
            double lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericalError("policy training diverged: non-finite loss at epoch " +
                                     std::to_string(epoch));
            tape.backward(loss);
            adam_step(params, opt);
            metrics << nlohmann::json{{"phase", "train_step"},
                                      {"epoch", epoch},
                                      {"step", global_step},
                                      {"loss", lv}}
                           .dump()
                    << "\n";
            epoch_loss += lv * static_cast<double>(take);
            epoch_samples += take;
            ++global_step;
        }
        epoch_loss /= static_cast<double>(epoch_samples);
        metrics << nlohmann::json{{"phase", "train_epoch"}, {"epoch", epoch}, {"loss", epoch_loss}}.dump()
                << "\n";
        if (progress)
            (*progress) << "policy epoch " << epoch << "/" << cfg.epochs << " loss " << epoch_loss << "\n";
        if (epoch == 1) result.first_epoch_loss = epoch_loss;
        result.final_epoch_loss = epoch_loss;

        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04lld.gcpc", static_cast<long long>(epoch));
        std::filesystem::path ck_path = run_dir / "checkpoints" / name;
        save_policy(ck_path, policy, stats, &opt);
        result.retained_checkpoints.push_back(ck_path);
        if (result.retained_checkpoints.size() > 5) {
            std::filesystem::remove(result.retained_checkpoints.front());
            result.retained_checkpoints.erase(result.retained_checkpoints.begin());
        }
    }
    metrics.flush();
    return result;
}

}  // namespace gcpc
