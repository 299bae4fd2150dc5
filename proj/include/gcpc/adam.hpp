#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gcpc/tensor.hpp"

namespace gcpc {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Per-parameter first/second moment buffers plus the shared step counter.
struct AdamState {
    AdamConfig cfg;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t step = 0;
};

inline AdamState make_adam_state(const std::vector<Tensor>& params, AdamConfig cfg) {
    AdamState st;
    st.cfg = cfg;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
        st.m.push_back(Tensor::zeros(p.shape()));
        st.v.push_back(Tensor::zeros(p.shape()));
    }
    return st;
}

/// Standard bias-corrected Adam update, reading gradients from each
/// parameter's accumulator. Gradients are left untouched.
inline void adam_step(std::vector<Tensor>& params, AdamState& st) {
    if (params.size() != st.m.size())
        throw std::invalid_argument("adam_step: state/parameter count mismatch");
    st.step += 1;
    double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (p.shape() != st.m[i].shape())
            throw std::invalid_argument("adam_step: parameter shape changed under optimizer");
        auto g = p.grad();
        auto pd = p.data();
        auto md = st.m[i].data();
        auto vd = st.v[i].data();
        for (std::size_t j = 0; j < pd.size(); ++j) {
            md[j] = st.cfg.beta1 * md[j] + (1.0 - st.cfg.beta1) * g[j];
            vd[j] = st.cfg.beta2 * vd[j] + (1.0 - st.cfg.beta2) * g[j] * g[j];
            double mhat = md[j] / bc1;
            double vhat = vd[j] / bc2;
            pd[j] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
        }
    }
}

/// Convenience wrapper owning the parameter list and its Adam state.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg)
        : params_(std::move(params)), state_(make_adam_state(params_, cfg)) {}

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() { adam_step(params_, state_); }

    AdamState& state() { return state_; }
    const AdamState& state() const { return state_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamState state_;
};

}  // namespace gcpc
