#pragma once

#include <cmath>
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
#include "gcpc/mask.hpp"
#include "gcpc/nn.hpp"
#include "gcpc/rng.hpp"
#include "gcpc/tensor.hpp"

namespace gcpc {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrajNetConfig {
    std::int64_t d_model = 64;
    std::int64_t n_heads = 4;
    std::int64_t encoder_layers = 2;
    std::int64_t decoder_layers = 1;
    std::int64_t n_slots = 4;
    std::int64_t k = 10;
    std::int64_t p = 40;
    Objective objective = Objective::mae_rc;
    double dropout = 0.1;
    double learning_rate = 1e-4;
    bool goal_conditioning = true;
    bool include_actions = false;
    bool loss_masked_only = false;
    // empty = reconstruct the full state space; forced to full when actions
    // are part of the tokens
    std::vector<std::int64_t> reconstruction_subspace;

    std::int64_t epochs = 20;
    std::int64_t batch_size = 256;
    std::int64_t samples_per_epoch = 2048;
    std::int64_t val_samples = 512;

    // resolved from the dataset
    std::int64_t state_dim = 0;
    std::int64_t action_dim = 0;
    std::int64_t goal_width = 0;

    std::int64_t recon_span() const { return objective_has_future(objective) ? k + p : k; }
    std::vector<std::int64_t> recon_dims() const {
        if (include_actions || reconstruction_subspace.empty()) {
            std::vector<std::int64_t> all(static_cast<std::size_t>(state_dim));
            for (std::int64_t i = 0; i < state_dim; ++i) all[static_cast<std::size_t>(i)] = i;
            return all;
        }
        return reconstruction_subspace;
    }
    std::int64_t recon_width() const { return static_cast<std::int64_t>(recon_dims().size()); }

    void validate() const {
        if (d_model % n_heads != 0) throw ConfigError("trajnet: d_model must be divisible by n_heads");
        if (n_slots < 1) throw ConfigError("trajnet: n_slots must be >= 1");
        if (k < 1) throw ConfigError("trajnet: k must be >= 1");
        if (objective_has_future(objective) && p < 1)
            throw ConfigError("trajnet: p must be >= 1 for predictive objectives");
        for (auto d : reconstruction_subspace)
            if (d < 0 || d >= state_dim) throw ConfigError("trajnet: reconstruction_subspace out of range");
    }
};

inline nlohmann::json trajnet_config_to_json(const TrajNetConfig& c) {
    nlohmann::json j;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["encoder_layers"] = c.encoder_layers;
    j["decoder_layers"] = c.decoder_layers;
    j["n_slots"] = c.n_slots;
    j["k"] = c.k;
    j["p"] = c.p;
    j["objective"] = to_string(c.objective);
    j["dropout"] = c.dropout;
    j["learning_rate"] = c.learning_rate;
    j["goal_conditioning"] = c.goal_conditioning;
    j["include_actions"] = c.include_actions;
    j["loss_masked_only"] = c.loss_masked_only;
    j["reconstruction_subspace"] = c.reconstruction_subspace;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["samples_per_epoch"] = c.samples_per_epoch;
    j["val_samples"] = c.val_samples;
    j["state_dim"] = c.state_dim;
    j["action_dim"] = c.action_dim;
    j["goal_width"] = c.goal_width;
    return j;
}

inline TrajNetConfig trajnet_config_from_json(const nlohmann::json& j) {
    TrajNetConfig c;
    c.d_model = j.at("d_model").get<std::int64_t>();
    c.n_heads = j.at("n_heads").get<std::int64_t>();
    c.encoder_layers = j.at("encoder_layers").get<std::int64_t>();
    c.decoder_layers = j.at("decoder_layers").get<std::int64_t>();
    c.n_slots = j.at("n_slots").get<std::int64_t>();
    c.k = j.at("k").get<std::int64_t>();
    c.p = j.at("p").get<std::int64_t>();
    c.objective = objective_from_string(j.at("objective").get<std::string>());
    c.dropout = j.at("dropout").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.goal_conditioning = j.at("goal_conditioning").get<bool>();
    c.include_actions = j.at("include_actions").get<bool>();
    c.loss_masked_only = j.at("loss_masked_only").get<bool>();
    c.reconstruction_subspace = j.at("reconstruction_subspace").get<std::vector<std::int64_t>>();
    c.epochs = j.at("epochs").get<std::int64_t>();
    c.batch_size = j.at("batch_size").get<std::int64_t>();
    c.samples_per_epoch = j.at("samples_per_epoch").get<std::int64_t>();
    c.val_samples = j.at("val_samples").get<std::int64_t>();
    c.state_dim = j.at("state_dim").get<std::int64_t>();
    c.action_dim = j.at("action_dim").get<std::int64_t>();
    c.goal_width = j.at("goal_width").get<std::int64_t>();
    return c;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

using Bottleneck = Tensor;  // [n_slots, d_model] per sample

struct TrajNet {
    TrajNetConfig cfg;
    LinearParams state_enc;
    LinearParams action_enc;  // include_actions only
    LinearParams goal_enc;    // goal_conditioning only
    Tensor slot_tokens;       // [n_slots, d]
    Tensor mask_token;        // [d]
    Tensor type_state;        // [d], include_actions only
    Tensor type_action;       // [d], include_actions only
    std::vector<BlockParams> encoder;
    std::vector<BlockParams> decoder;
    LinearParams state_head;   // [recon_width, d]
    LinearParams action_head;  // include_actions only

    NamedParams named_params() const {
        NamedParams np;
        register_params(np, "state_enc", state_enc);
        if (cfg.include_actions) register_params(np, "action_enc", action_enc);
        if (cfg.goal_conditioning) register_params(np, "goal_enc", goal_enc);
        np.emplace_back("slot_tokens", slot_tokens);
        np.emplace_back("mask_token", mask_token);
        if (cfg.include_actions) {
            np.emplace_back("type_state", type_state);
            np.emplace_back("type_action", type_action);
        }
        for (std::size_t i = 0; i < encoder.size(); ++i)
            register_params(np, "encoder." + std::to_string(i), encoder[i]);
        for (std::size_t i = 0; i < decoder.size(); ++i)
            register_params(np, "decoder." + std::to_string(i), decoder[i]);
        register_params(np, "state_head", state_head);
        if (cfg.include_actions) register_params(np, "action_head", action_head);
        return np;
    }
};

inline TrajNet make_trajnet(const TrajNetConfig& cfg, RngStream& rng) {
    cfg.validate();
    if (cfg.state_dim < 1) throw ConfigError("trajnet: state_dim unresolved");
    if (cfg.goal_conditioning && cfg.goal_width < 1)
        throw ConfigError("trajnet: goal_width unresolved with goal conditioning on");
    TrajNet m;
    m.cfg = cfg;
    std::int64_t d = cfg.d_model;
    m.state_enc = make_linear(d, cfg.state_dim, rng);
    if (cfg.include_actions) m.action_enc = make_linear(d, cfg.action_dim, rng);
    if (cfg.goal_conditioning) m.goal_enc = make_linear(d, cfg.goal_width, rng);
    m.slot_tokens = Tensor::randn({cfg.n_slots, d}, kInitStd, rng, true);
    m.mask_token = Tensor::randn({d}, kInitStd, rng, true);
    if (cfg.include_actions) {
        m.type_state = Tensor::randn({d}, kInitStd, rng, true);
        m.type_action = Tensor::randn({d}, kInitStd, rng, true);
    }
    for (std::int64_t i = 0; i < cfg.encoder_layers; ++i) m.encoder.push_back(make_block(d, cfg.n_heads, rng));
    for (std::int64_t i = 0; i < cfg.decoder_layers; ++i) m.decoder.push_back(make_block(d, cfg.n_heads, rng));
    m.state_head = make_linear(cfg.recon_width(), d, rng);
    if (cfg.include_actions) m.action_head = make_linear(cfg.action_dim, d, rng);
    return m;
}

// ---------------------------------------------------------------------------
// masking at the token level
// ---------------------------------------------------------------------------

/// Replaces masked rows of an embedded token block with the shared learned
/// mask token. Positional encoding is added afterwards by the caller, so a
/// masked slot still carries its timestep.
inline Tensor apply_mask(Tape* tape, const Tensor& embedded, const std::vector<std::uint8_t>& mask,
                         const Tensor& mask_token) {
    auto [rows, cols] = detail::rows_cols(embedded);
    if (static_cast<std::int64_t>(mask.size()) != rows)
        throw std::invalid_argument("apply_mask: mask length does not match token count");
    bool any = false;
    for (auto m : mask) any = any || m;
    if (!any) return embedded;
    std::vector<double> keep(mask.size()), drop(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        keep[i] = mask[i] ? 0.0 : 1.0;
        drop[i] = mask[i] ? 1.0 : 0.0;
    }
    Tensor kept = scale_rows(tape, embedded, keep);
    Tensor filled = scale_rows(tape, tile_rows(tape, mask_token, rows), drop);
    return add(tape, kept, filled);
}

// ---------------------------------------------------------------------------
// encode / decode
// ---------------------------------------------------------------------------

/// One sample's encoder view, already normalized.
struct EncoderInput {
    std::vector<double> hist_states;   // k * state_dim
    std::vector<double> hist_actions;  // k * action_dim when actions are used
    std::vector<std::uint8_t> state_mask;   // k, 1 = masked
    std::vector<std::uint8_t> action_mask;  // k, 1 = masked
    std::vector<double> goal;          // goal_width when goal conditioning is on
    bool omit_goal = false;            // drop the goal token (w/o-GC probing)
};

namespace detail {

inline Tensor add_type(Tape* tape, const TrajNet& m, const Tensor& x, bool is_action) {
    if (!m.cfg.include_actions) return x;
    return add(tape, x, is_action ? m.type_action : m.type_state);
}

}  // namespace detail

/// Runs the bidirectional encoder over [slot tokens; goal token; history
/// tokens] and returns the slot outputs, shape [B, n_slots, d].
inline Tensor encode_batch(Tape* tape, const TrajNet& m, const std::vector<EncoderInput>& batch,
                           RngStream& rng, bool training) {
    const TrajNetConfig& cfg = m.cfg;
    std::int64_t B = static_cast<std::int64_t>(batch.size());
    std::int64_t k = cfg.k, d = cfg.d_model;
    if (B < 1) throw std::invalid_argument("encode_batch: empty batch");

    Tensor hs = Tensor::zeros({B * k, cfg.state_dim});
    std::vector<std::uint8_t> smask(static_cast<std::size_t>(B * k), 0);
    for (std::int64_t b = 0; b < B; ++b) {
        const EncoderInput& in = batch[static_cast<std::size_t>(b)];
        if (static_cast<std::int64_t>(in.hist_states.size()) != k * cfg.state_dim)
            throw std::invalid_argument("encode_batch: history length mismatch");
        std::copy(in.hist_states.begin(), in.hist_states.end(),
                  hs.data().begin() + b * k * cfg.state_dim);
        if (!in.state_mask.empty()) {
            if (static_cast<std::int64_t>(in.state_mask.size()) != k)
                throw std::invalid_argument("encode_batch: state mask length mismatch");
            for (std::int64_t i = 0; i < k; ++i)
                smask[static_cast<std::size_t>(b * k + i)] = in.state_mask[static_cast<std::size_t>(i)];
        }
    }
    Tensor pe = sinusoidal_pe(k, d);
    Tensor st = apply_mask(tape, linear_forward(tape, m.state_enc, hs), smask, m.mask_token);
    Tensor st3 = add(tape, detail::add_type(tape, m, reshape(tape, st, {B, k, d}), false), pe);

    Tensor tokens = st3;
    if (cfg.include_actions) {
        Tensor ha = Tensor::zeros({B * k, cfg.action_dim});
        std::vector<std::uint8_t> amask(static_cast<std::size_t>(B * k), 0);
        for (std::int64_t b = 0; b < B; ++b) {
            const EncoderInput& in = batch[static_cast<std::size_t>(b)];
            std::copy(in.hist_actions.begin(), in.hist_actions.end(),
                      ha.data().begin() + b * k * cfg.action_dim);
            if (!in.action_mask.empty())
                for (std::int64_t i = 0; i < k; ++i)
                    amask[static_cast<std::size_t>(b * k + i)] = in.action_mask[static_cast<std::size_t>(i)];
        }
        Tensor at = apply_mask(tape, linear_forward(tape, m.action_enc, ha), amask, m.mask_token);
        Tensor at3 = add(tape, detail::add_type(tape, m, reshape(tape, at, {B, k, d}), true), pe);
        tokens = interleave_dim1(tape, st3, at3);  // s_1 a_1 s_2 a_2 ...
    }

    bool omit_goal = batch[0].omit_goal;
    for (const auto& in : batch)
        if (in.omit_goal != omit_goal)
            throw std::invalid_argument("encode_batch: mixed omit_goal flags in one batch");

    std::vector<Tensor> parts;
    parts.push_back(tile_batch(tape, m.slot_tokens, B));
    if (cfg.goal_conditioning && !omit_goal) {
        Tensor g = Tensor::zeros({B, cfg.goal_width});
        for (std::int64_t b = 0; b < B; ++b) {
            const EncoderInput& in = batch[static_cast<std::size_t>(b)];
            if (static_cast<std::int64_t>(in.goal.size()) != cfg.goal_width)
                throw std::invalid_argument("encode_batch: goal width mismatch");
            std::copy(in.goal.begin(), in.goal.end(), g.data().begin() + b * cfg.goal_width);
        }
        parts.push_back(reshape(tape, linear_forward(tape, m.goal_enc, g), {B, 1, d}));
    }
    parts.push_back(tokens);

    Tensor seq = concat_dim1(tape, parts);
    for (const auto& blk : m.encoder)
        seq = transformer_block(tape, blk, seq, nullptr, cfg.dropout, rng, training);
    return slice_dim1(tape, seq, 0, cfg.n_slots);
}

/// Single-sample eval-mode encode; returns the bottleneck [n_slots, d].
inline Bottleneck encode(const TrajNet& m, const EncoderInput& input) {
    RngStream rng(0);
    Tensor b = encode_batch(nullptr, m, {input}, rng, false);
    return reshape(nullptr, b, {m.cfg.n_slots, m.cfg.d_model});
}

struct DecodeOut {
    Tensor states;   // [B, T_rec, recon_width]
    Tensor actions;  // [B, T_rec, action_dim] when actions are used
};

/// Decoder input is [bottleneck tokens; T mask tokens with positional codes];
/// the window is reconstructed purely from the bottleneck.
inline DecodeOut decode_batch(Tape* tape, const TrajNet& m, const Tensor& bottleneck,
                              RngStream& rng, bool training) {
    const TrajNetConfig& cfg = m.cfg;
    if (bottleneck.ndim() != 3 || bottleneck.dim(1) != cfg.n_slots || bottleneck.dim(2) != cfg.d_model)
        throw std::invalid_argument("decode_batch: bottleneck shape does not match config");
    std::int64_t B = bottleneck.dim(0), d = cfg.d_model, T = cfg.recon_span();

    Tensor pe = sinusoidal_pe(T, d);
    Tensor mt = reshape(tape, tile_rows(tape, m.mask_token, B * T), {B, T, d});
    Tensor queries = add(tape, detail::add_type(tape, m, mt, false), pe);
    if (cfg.include_actions) {
        Tensor amt = add(tape, detail::add_type(tape, m, reshape(tape, tile_rows(tape, m.mask_token, B * T), {B, T, d}), true), pe);
        queries = interleave_dim1(tape, queries, amt);
    }
    Tensor seq = concat_dim1(tape, {bottleneck, queries});
    for (const auto& blk : m.decoder)
        seq = transformer_block(tape, blk, seq, nullptr, cfg.dropout, rng, training);
    Tensor out_tokens = slice_dim1(tape, seq, cfg.n_slots, cfg.include_actions ? 2 * T : T);

    DecodeOut out;
    if (cfg.include_actions) {
        Tensor stoks = deinterleave_dim1(tape, out_tokens, 0);
        Tensor atoks = deinterleave_dim1(tape, out_tokens, 1);
        out.states = linear_forward(tape, m.state_head, stoks);
        out.actions = linear_forward(tape, m.action_head, atoks);
    } else {
        out.states = linear_forward(tape, m.state_head, out_tokens);
    }
    return out;
}

/// Single-sample eval-mode decode of the window states, [T_rec, recon_width].
inline Tensor decode(const TrajNet& m, const Bottleneck& bottleneck) {
    Tensor bn = bottleneck.ndim() == 2
                    ? reshape(nullptr, bottleneck, {1, m.cfg.n_slots, m.cfg.d_model})
                    : bottleneck;
    RngStream rng(0);
    DecodeOut out = decode_batch(nullptr, m, bn, rng, false);
    return reshape(nullptr, out.states, {m.cfg.recon_span(), m.cfg.recon_width()});
}

/// MSE over positions flagged as reconstruction targets and not padded.
inline Tensor reconstruction_loss(Tape* tape, const Tensor& pred, const Tensor& target,
                                  const Tensor& position_weights) {
    return mse_loss(tape, pred, target, &position_weights);
}

// ---------------------------------------------------------------------------
// training samples
// ---------------------------------------------------------------------------

struct TrainingSample {
    EncoderInput enc;
    std::vector<double> state_targets;   // T_rec * recon_width, normalized
    std::vector<double> action_targets;  // T_rec * action_dim (actions mode)
    std::vector<double> weights;         // T_rec: target flag && !pad (&& masked if configured)
    std::vector<double> action_weights;  // T_rec: history-only supervision
};

/// Draws (tau, t): t uniform over [1, H]. When a future state must exist
/// (target-state goals), t == H is redrawn.
inline std::pair<std::size_t, std::int64_t> draw_anchor(const Dataset& ds,
                                                        const std::vector<std::size_t>& pool,
                                                        bool needs_future_state, RngStream& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::size_t ti = pool[rng.below(pool.size())];
        std::int64_t H = ds.trajectories[ti].length();
        if (needs_future_state && H < 2) continue;
        std::int64_t t = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(H)));
        if (needs_future_state && t == H) continue;
        return {ti, t};
    }
    throw DataError("draw_anchor: could not sample a usable (trajectory, timestep)");
}

inline TrainingSample make_training_sample(const TrajNetConfig& cfg, const Dataset& ds,
                                           const NormStats& stats, std::size_t traj_index,
                                           std::int64_t t, RngStream& rng) {
    const Trajectory& tr = ds.trajectories[traj_index];
    WindowSample w = sample_window(tr, t, cfg.k, cfg.p);
    MaskSpec spec = build_mask(cfg.objective, cfg.k, cfg.p, rng);
    Goal goal;
    if (cfg.goal_conditioning)
        goal = sample_goal(tr, t, ds.meta.goal_mode, ds.meta.goal_subspace, ds.meta.max_episode_steps, rng);

    TrainingSample s;
    std::int64_t sd = cfg.state_dim;
    s.enc.hist_states.reserve(static_cast<std::size_t>(cfg.k * sd));
    for (const auto& st : w.history) {
        std::vector<double> n = st;
        normalize_state(stats, n);
        s.enc.hist_states.insert(s.enc.hist_states.end(), n.begin(), n.end());
    }
    s.enc.state_mask.assign(spec.input_mask.begin(), spec.input_mask.begin() + cfg.k);
    if (cfg.include_actions) {
        for (const auto& a : w.history_actions)
            s.enc.hist_actions.insert(s.enc.hist_actions.end(), a.begin(), a.end());
        s.enc.action_mask = s.enc.state_mask;  // a masked timestep hides both tokens
    }
    if (cfg.goal_conditioning) s.enc.goal = normalize_goal(stats, goal, ds.meta.goal_subspace);

    std::int64_t T = cfg.recon_span();
    auto dims = cfg.recon_dims();
    s.state_targets.reserve(static_cast<std::size_t>(T) * dims.size());
    s.weights.assign(static_cast<std::size_t>(T), 0.0);
    s.action_weights.assign(static_cast<std::size_t>(T), 0.0);
    for (std::int64_t i = 0; i < T; ++i) {
        bool in_history = i < cfg.k;
        const auto& raw = in_history ? w.history[static_cast<std::size_t>(i)]
                                     : w.future[static_cast<std::size_t>(i - cfg.k)];
        for (auto dIdx : dims) {
            auto ds_idx = static_cast<std::size_t>(dIdx);
            s.state_targets.push_back((raw[ds_idx] - stats.state_mean[ds_idx]) / stats.state_std[ds_idx]);
        }
        bool padded = in_history ? w.history_pad[static_cast<std::size_t>(i)]
                                 : w.future_pad[static_cast<std::size_t>(i - cfg.k)];
        double live = (spec.recon_target[static_cast<std::size_t>(i)] && !padded) ? 1.0 : 0.0;
        if (cfg.loss_masked_only && !spec.input_mask[static_cast<std::size_t>(i)]) live = 0.0;
        s.weights[static_cast<std::size_t>(i)] = live;
        if (cfg.include_actions) {
            if (in_history) {
                const auto& act = w.history_actions[static_cast<std::size_t>(i)];
                s.action_targets.insert(s.action_targets.end(), act.begin(), act.end());
                s.action_weights[static_cast<std::size_t>(i)] = live;
            } else {
                s.action_targets.insert(s.action_targets.end(), static_cast<std::size_t>(cfg.action_dim), 0.0);
            }
        }
    }
    return s;
}

/// Forward pass plus loss for a batch of prepared samples.
inline Tensor trajnet_batch_loss(Tape* tape, const TrajNet& m, const std::vector<TrainingSample>& samples,
                                 RngStream& rng, bool training) {
    const TrajNetConfig& cfg = m.cfg;
    std::int64_t B = static_cast<std::int64_t>(samples.size());
    std::int64_t T = cfg.recon_span();
    std::int64_t w = cfg.recon_width();

    std::vector<EncoderInput> enc;
    enc.reserve(samples.size());
    for (const auto& s : samples) enc.push_back(s.enc);
    Tensor bn = encode_batch(tape, m, enc, rng, training);
    DecodeOut out = decode_batch(tape, m, bn, rng, training);

    Tensor targets = Tensor::zeros({B, T, w});
    Tensor weights = Tensor::zeros({B, T});
    for (std::int64_t b = 0; b < B; ++b) {
        const auto& s = samples[static_cast<std::size_t>(b)];
        std::copy(s.state_targets.begin(), s.state_targets.end(), targets.data().begin() + b * T * w);
        std::copy(s.weights.begin(), s.weights.end(), weights.data().begin() + b * T);
    }
    Tensor loss = reconstruction_loss(tape, out.states, targets, weights);

    if (cfg.include_actions) {
        Tensor atargets = Tensor::zeros({B, T, cfg.action_dim});
        Tensor aweights = Tensor::zeros({B, T});
        double any = 0;
        for (std::int64_t b = 0; b < B; ++b) {
            const auto& s = samples[static_cast<std::size_t>(b)];
            std::copy(s.action_targets.begin(), s.action_targets.end(),
                      atargets.data().begin() + b * T * cfg.action_dim);
            std::copy(s.action_weights.begin(), s.action_weights.end(), aweights.data().begin() + b * T);
            for (double x : s.action_weights) any += x;
        }
        if (any > 0)
            loss = add(tape, loss, reconstruction_loss(tape, out.actions, atargets, aweights));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// checkpoint integration
// ---------------------------------------------------------------------------

inline void save_trajnet(const std::filesystem::path& path, const TrajNet& m, const NormStats& stats,
                         const AdamState* opt) {
    Checkpoint ck;
    ck.component = "TRAJNET";
    ck.config = trajnet_config_to_json(m.cfg);
    ck.extra["norm_stats"] = norm_stats_to_json(stats);
    ck.tensors = m.named_params();
    ck.extra["has_optimizer"] = opt != nullptr;
    if (opt) {
        ck.extra["optimizer"] = {{"step", opt->step},
                                 {"lr", opt->cfg.lr},
                                 {"beta1", opt->cfg.beta1},
                                 {"beta2", opt->cfg.beta2},
                                 {"eps", opt->cfg.eps}};
        NamedParams base = m.named_params();
        for (std::size_t i = 0; i < base.size(); ++i) {
            ck.tensors.emplace_back("adam.m." + base[i].first, opt->m[i]);
            ck.tensors.emplace_back("adam.v." + base[i].first, opt->v[i]);
        }
    }
    save_checkpoint(path, ck);
}

struct LoadedTrajNet {
    TrajNet model;
    NormStats stats;
};

inline LoadedTrajNet load_trajnet(const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.component != "TRAJNET")
        throw FormatError("checkpoint " + path.string() + " is '" + ck.component + "', expected TRAJNET");
    LoadedTrajNet out;
    TrajNetConfig cfg = trajnet_config_from_json(ck.config);
    RngStream rng(0);
    out.model = make_trajnet(cfg, rng);
    NamedParams params = out.model.named_params();
    bool has_opt = ck.extra.value("has_optimizer", false);
    if (has_opt) {
        // model tensors are the leading table entries
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
// training loop
// ---------------------------------------------------------------------------

struct TrajNetRunResult {
    std::int64_t best_epoch = 0;  // 1-based
    double best_val_loss = 0;
    std::vector<double> val_losses;
    std::filesystem::path best_checkpoint;
};

namespace detail {

inline std::vector<TrainingSample> draw_sample_batch(const TrajNetConfig& cfg, const Dataset& ds,
                                                     const NormStats& stats,
                                                     const std::vector<std::size_t>& pool,
                                                     RngStream& root, const char* label,
                                                     std::int64_t first_index, std::int64_t count) {
    std::vector<TrainingSample> out;
    out.reserve(static_cast<std::size_t>(count));
    bool needs_future = cfg.goal_conditioning && ds.meta.goal_mode == GoalMode::target_state;
    for (std::int64_t i = 0; i < count; ++i) {
        RngStream s = root.split(label, static_cast<std::uint64_t>(first_index + i));
        auto [ti, t] = draw_anchor(ds, pool, needs_future, s);
        out.push_back(make_training_sample(cfg, ds, stats, ti, t, s));
    }
    return out;
}

}  // namespace detail

inline TrajNetRunResult train_trajnet(const TrajNetConfig& config, const Dataset& ds,
                                      std::uint64_t seed, const std::filesystem::path& run_dir,
                                      std::ostream* progress = nullptr) {
    TrajNetConfig cfg = config;
    cfg.state_dim = ds.meta.state_dim;
    cfg.action_dim = ds.meta.action_dim;
    cfg.goal_width = cfg.goal_conditioning ? ds.meta.goal_width() : 0;
    cfg.validate();
    if (cfg.epochs < 1) throw ConfigError("trajnet: epochs must be >= 1");

    std::filesystem::create_directories(run_dir / "checkpoints");
    std::ofstream metrics(run_dir / "metrics.jsonl", std::ios::app);
    if (!metrics) throw DataError("cannot write metrics.jsonl in " + run_dir.string());

    RngStream root(seed);
    RngStream init = root.split("init");
    TrajNet model = make_trajnet(cfg, init);
    NormStats stats = compute_norm_stats(ds);
    NamedParams named = model.named_params();
    std::vector<Tensor> params = param_tensors(named);
    AdamState opt = make_adam_state(params, {.lr = cfg.learning_rate});

    // validation tuples are fixed across epochs, including their masks
    std::int64_t n_val = std::min<std::int64_t>(cfg.val_samples,
                                                static_cast<std::int64_t>(ds.val_indices.size()) * 16);
    std::vector<TrainingSample> val_set = detail::draw_sample_batch(
        cfg, ds, stats, ds.val_indices, root, "val_sample", 0, n_val);

    auto eval_validation = [&]() {
        double acc = 0;
        std::int64_t done = 0;
        RngStream eval_rng(0);
        while (done < n_val) {
            std::int64_t take = std::min<std::int64_t>(cfg.batch_size, n_val - done);
            std::vector<TrainingSample> chunk(val_set.begin() + done, val_set.begin() + done + take);
            Tensor l = trajnet_batch_loss(nullptr, model, chunk, eval_rng, false);
            acc += l.item() * static_cast<double>(take);
            done += take;
        }
        return acc / static_cast<double>(n_val);
    };

    TrajNetRunResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    std::int64_t steps_per_epoch = (cfg.samples_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
    std::int64_t global_step = 0;
    for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
            std::int64_t take = std::min<std::int64_t>(cfg.batch_size,
                                                       cfg.samples_per_epoch - step * cfg.batch_size);
            if (take <= 0) break;
            std::vector<TrainingSample> batch = detail::draw_sample_batch(
                cfg, ds, stats, ds.train_indices, root, "sample",
                (epoch - 1) * cfg.samples_per_epoch + step * cfg.batch_size, take);
            RngStream drop = root.split("dropout", static_cast<std::uint64_t>(global_step));
            Tape tape;
            for (auto& t : params) t.zero_grad();
            Tensor loss = trajnet_batch_loss(&tape, model, batch, drop, true);
            double lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericalError("trajnet training diverged: non-finite loss at epoch " +
                                     std::to_string(epoch) + " step " + std::to_string(step));
            tape.backward(loss);
            adam_step(params, opt);
            metrics << nlohmann::json{{"phase", "train_step"},
                                      {"epoch", epoch},
                                      {"step", global_step},
                                      {"loss", lv}}
                           .dump()
                    << "\n";
            ++global_step;
        }
        double val = eval_validation();
        result.val_losses.push_back(val);
        metrics << nlohmann::json{{"phase", "val"}, {"epoch", epoch}, {"loss", val}}.dump() << "\n";
        if (progress)
            (*progress) << "epoch " << epoch << "/" << cfg.epochs << " val_loss " << val << "\n";

        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04lld.gcpc", static_cast<long long>(epoch));
        std::filesystem::path ck_path = run_dir / "checkpoints" / name;
        save_trajnet(ck_path, model, stats, &opt);
        if (val < result.best_val_loss) {
            result.best_val_loss = val;
            result.best_epoch = epoch;
            result.best_checkpoint = ck_path;
        }
    }
    metrics.flush();

    std::filesystem::copy_file(result.best_checkpoint, run_dir / "checkpoints" / "best.gcpc",
                               std::filesystem::copy_options::overwrite_existing);
    std::ofstream best(run_dir / "best.json");
    best << nlohmann::json{{"best_epoch", result.best_epoch},
                           {"best_val_loss", result.best_val_loss},
                           {"checkpoint", std::string("checkpoints/") +
                                              result.best_checkpoint.filename().string()}}
                .dump(2)
         << "\n";
    return result;
}

// ---------------------------------------------------------------------------
// zero-shot action inference
// ---------------------------------------------------------------------------

/// Reads the decoder's action output at the current timestep, whose action
/// token is masked on input. Requires a model trained with actions.
inline std::vector<double> zero_shot_actions(const TrajNet& m, const NormStats& stats,
                                             const std::vector<std::vector<double>>& hist_states,
                                             const std::vector<std::vector<double>>& hist_actions,
                                             const Goal& goal,
                                             const std::vector<std::int64_t>& goal_subspace) {
    const TrajNetConfig& cfg = m.cfg;
    if (!cfg.include_actions)
        throw DataError("zero_shot_actions: model was trained without action tokens");
    if (static_cast<std::int64_t>(hist_states.size()) != cfg.k)
        throw std::invalid_argument("zero_shot_actions: expected k history states");
    if (static_cast<std::int64_t>(hist_actions.size()) < cfg.k - 1)
        throw std::invalid_argument("zero_shot_actions: expected at least k-1 history actions");

    EncoderInput in;
    for (const auto& s : hist_states) {
        std::vector<double> n = s;
        normalize_state(stats, n);
        in.hist_states.insert(in.hist_states.end(), n.begin(), n.end());
    }
    for (std::int64_t i = 0; i < cfg.k; ++i) {
        if (i < static_cast<std::int64_t>(hist_actions.size()) && i < cfg.k - 1) {
            const auto& a = hist_actions[static_cast<std::size_t>(i)];
            in.hist_actions.insert(in.hist_actions.end(), a.begin(), a.end());
        } else {
            in.hist_actions.insert(in.hist_actions.end(), static_cast<std::size_t>(cfg.action_dim), 0.0);
        }
    }
    in.state_mask.assign(static_cast<std::size_t>(cfg.k), 0);
    in.action_mask.assign(static_cast<std::size_t>(cfg.k), 0);
    in.action_mask.back() = 1;  // the current action is unknown
    if (cfg.goal_conditioning) in.goal = normalize_goal(stats, goal, goal_subspace);

    RngStream rng(0);
    Tensor bn = encode_batch(nullptr, m, {in}, rng, false);
    DecodeOut out = decode_batch(nullptr, m, bn, rng, false);
    std::vector<double> action(static_cast<std::size_t>(cfg.action_dim));
    std::int64_t T = cfg.recon_span();
    const double* ap = out.actions.data().data() + ((cfg.k - 1)) * cfg.action_dim;
    (void)T;
    for (std::int64_t i = 0; i < cfg.action_dim; ++i) action[static_cast<std::size_t>(i)] = ap[i];
    return action;
}

}  // namespace gcpc
