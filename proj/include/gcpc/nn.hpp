#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gcpc/rng.hpp"
#include "gcpc/tensor.hpp"

namespace gcpc {

inline constexpr double kInitStd = 0.02;

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// ---------------------------------------------------------------------------
// linear layer
// ---------------------------------------------------------------------------

struct LinearParams {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    std::int64_t in_features() const { return weight.dim(1); }
    std::int64_t out_features() const { return weight.dim(0); }
};

inline LinearParams make_linear(std::int64_t out, std::int64_t in, RngStream& rng) {
    LinearParams p;
    p.weight = Tensor::randn({out, in}, kInitStd, rng, /*requires_grad=*/true);
    p.bias = Tensor::zeros({out}, /*requires_grad=*/true);
    return p;
}

/// y = x W^T + b over the last dimension.
inline Tensor linear_forward(Tape* tape, const LinearParams& p, const Tensor& x) {
    std::int64_t in = p.in_features();
    std::int64_t out = p.out_features();
    if (x.shape().back() != in)
        throw std::invalid_argument("linear_forward: expected last dim " + std::to_string(in) +
                                    ", got " + std::to_string(x.shape().back()));
    std::int64_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out;
    Tensor y = Tensor::zeros(out_shape);
    {
        std::vector<double> wt(static_cast<std::size_t>(in * out));
        detail::transpose(p.weight.data().data(), wt.data(), out, in);
        double* yp = y.data().data();
        detail::gemm_nn(x.data().data(), wt.data(), yp, rows, in, out);
        const double* bp = p.bias.data().data();
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t o = 0; o < out; ++o) yp[r * out + o] += bp[o];
    }
    if (tape && (x.requires_grad() || p.weight.requires_grad() || p.bias.requires_grad())) {
        y.enable_grad();
        Tensor xc = x, wc = p.weight, bc = p.bias, yc = y;
        tape->record(y, [xc, wc, bc, yc, rows, in, out]() mutable {
            const double* g = yc.grad().data();
            if (xc.requires_grad())
                detail::gemm_nn(g, wc.data().data(), xc.grad().data(), rows, out, in);
            if (wc.requires_grad())
                detail::gemm_tn(g, xc.data().data(), wc.grad().data(), rows, out, in);
            if (bc.requires_grad()) {
                double* gb = bc.grad().data();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// positional encoding
// ---------------------------------------------------------------------------

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(pos / 10000^(2i/d)).
inline Tensor sinusoidal_pe(std::int64_t T, std::int64_t d) {
    if (d % 2 != 0) throw std::invalid_argument("sinusoidal_pe: width must be even");
    Tensor pe = Tensor::zeros({T, d});
    auto v = pe.data();
    for (std::int64_t pos = 0; pos < T; ++pos)
        for (std::int64_t i = 0; i < d / 2; ++i) {
            double rate = std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
            double arg = static_cast<double>(pos) / rate;
            v[pos * d + 2 * i] = std::sin(arg);
            v[pos * d + 2 * i + 1] = std::cos(arg);
        }
    return pe;
}

// ---------------------------------------------------------------------------
// layer norm parameters
// ---------------------------------------------------------------------------

struct LayerNormParams {
    Tensor gain;  // [d], init 1
    Tensor bias;  // [d], init 0
};

inline LayerNormParams make_layer_norm(std::int64_t d) {
    LayerNormParams p;
    p.gain = Tensor::full({d}, 1.0, /*requires_grad=*/true);
    p.bias = Tensor::zeros({d}, /*requires_grad=*/true);
    return p;
}

// ---------------------------------------------------------------------------
// multi-head attention
// ---------------------------------------------------------------------------

struct AttentionParams {
    LinearParams wq, wk, wv, wo;  // each [d, d]
    std::int64_t heads = 1;
};

inline AttentionParams make_attention(std::int64_t d, std::int64_t heads, RngStream& rng) {
    if (d % heads != 0) throw std::invalid_argument("make_attention: d must be divisible by heads");
    AttentionParams p;
    p.wq = make_linear(d, d, rng);
    p.wk = make_linear(d, d, rng);
    p.wv = make_linear(d, d, rng);
    p.wo = make_linear(d, d, rng);
    p.heads = heads;
    return p;
}

/// Bidirectional scaled dot-product attention over [B, T, d] (or [T, d]).
/// `key_excluded`, when given, flags keys that receive -inf logits for every
/// query.
inline Tensor multi_head_attention(Tape* tape, const AttentionParams& p, const Tensor& tokens,
                                   const std::vector<std::uint8_t>* key_excluded = nullptr) {
    bool rank2 = tokens.ndim() == 2;
    Tensor x = rank2 ? reshape(tape, tokens, {1, tokens.dim(0), tokens.dim(1)}) : tokens;
    if (x.ndim() != 3) throw std::invalid_argument("multi_head_attention: expects [B, T, d] or [T, d]");
    std::int64_t T = x.dim(1), d = x.dim(2), h = p.heads;
    std::int64_t hd = d / h;

    Tensor q = split_heads(tape, linear_forward(tape, p.wq, x), h);
    Tensor k = split_heads(tape, linear_forward(tape, p.wk, x), h);
    Tensor v = split_heads(tape, linear_forward(tape, p.wv, x), h);

    Tensor scores = mul(tape, matmul(tape, q, transpose_last2(tape, k)),
                        1.0 / std::sqrt(static_cast<double>(hd)));
    if (key_excluded) {
        if (static_cast<std::int64_t>(key_excluded->size()) != T)
            throw std::invalid_argument("multi_head_attention: mask length mismatch");
        Tensor bias = Tensor::zeros({T});
        auto bv = bias.data();
        for (std::int64_t i = 0; i < T; ++i)
            if ((*key_excluded)[static_cast<std::size_t>(i)])
                bv[i] = -std::numeric_limits<double>::infinity();
        scores = add(tape, scores, bias);
    }
    Tensor attn = softmax_lastdim(tape, scores);
    Tensor ctx = merge_heads(tape, matmul(tape, attn, v), h);
    Tensor out = linear_forward(tape, p.wo, ctx);
    return rank2 ? reshape(tape, out, {T, d}) : out;
}

// ---------------------------------------------------------------------------
// transformer block (pre-norm)
// ---------------------------------------------------------------------------

struct BlockParams {
    AttentionParams attn;
    LinearParams fc1;  // [4d, d]
    LinearParams fc2;  // [d, 4d]
    LayerNormParams ln1, ln2;
};

inline BlockParams make_block(std::int64_t d, std::int64_t heads, RngStream& rng) {
    BlockParams b;
    b.attn = make_attention(d, heads, rng);
    b.fc1 = make_linear(4 * d, d, rng);
    b.fc2 = make_linear(d, 4 * d, rng);
    b.ln1 = make_layer_norm(d);
    b.ln2 = make_layer_norm(d);
    return b;
}

/// x + Attn(LN(x)), then x + FFN(LN(x)); dropout on both sublayer outputs in
/// training mode.
inline Tensor transformer_block(Tape* tape, const BlockParams& p, const Tensor& tokens,
                                const std::vector<std::uint8_t>* key_excluded, double dropout_rate,
                                RngStream& rng, bool training) {
    Tensor a = multi_head_attention(tape, p.attn, layer_norm(tape, tokens, p.ln1.gain, p.ln1.bias),
                                    key_excluded);
    Tensor x = add(tape, tokens, dropout(tape, a, dropout_rate, rng, training));
    Tensor f = linear_forward(tape, p.fc2,
                              gelu(tape, linear_forward(tape, p.fc1,
                                                        layer_norm(tape, x, p.ln2.gain, p.ln2.bias))));
    return add(tape, x, dropout(tape, f, dropout_rate, rng, training));
}

// ---------------------------------------------------------------------------
// parameter registration
// ---------------------------------------------------------------------------

inline void register_params(NamedParams& out, const std::string& prefix, const LinearParams& p) {
    out.emplace_back(prefix + ".weight", p.weight);
    out.emplace_back(prefix + ".bias", p.bias);
}

inline void register_params(NamedParams& out, const std::string& prefix, const LayerNormParams& p) {
    out.emplace_back(prefix + ".gain", p.gain);
    out.emplace_back(prefix + ".bias", p.bias);
}

inline void register_params(NamedParams& out, const std::string& prefix, const AttentionParams& p) {
    register_params(out, prefix + ".wq", p.wq);
    register_params(out, prefix + ".wk", p.wk);
    register_params(out, prefix + ".wv", p.wv);
    register_params(out, prefix + ".wo", p.wo);
}

inline void register_params(NamedParams& out, const std::string& prefix, const BlockParams& p) {
    register_params(out, prefix + ".attn", p.attn);
    register_params(out, prefix + ".fc1", p.fc1);
    register_params(out, prefix + ".fc2", p.fc2);
    register_params(out, prefix + ".ln1", p.ln1);
    register_params(out, prefix + ".ln2", p.ln2);
}

inline std::vector<Tensor> param_tensors(const NamedParams& np) {
    std::vector<Tensor> out;
    out.reserve(np.size());
    for (const auto& [name, t] : np) out.push_back(t);
    return out;
}

}  // namespace gcpc
