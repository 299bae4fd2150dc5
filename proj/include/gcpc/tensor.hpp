#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcpc/errors.hpp"
#include "gcpc/rng.hpp"

namespace gcpc {

using Shape = std::vector<std::int64_t>;

namespace detail {

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless requires_grad
    bool requires_grad = false;
};

// ---- dense kernels (row-major) ----

// c[M,N] += a[M,K] b[K,N]
inline void gemm_nn(const double* a, const double* b, double* c,
                    std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t m = 0; m < M; ++m) {
        const double* ar = a + m * K;
        double* cr = c + m * N;
        for (std::int64_t k = 0; k < K; ++k) {
            double av = ar[k];
            const double* br = b + k * N;
            for (std::int64_t n = 0; n < N; ++n) cr[n] += av * br[n];
        }
    }
}

// c[K,N] += a[M,K]^T b[M,N]
inline void gemm_tn(const double* a, const double* b, double* c,
                    std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t m = 0; m < M; ++m) {
        const double* ar = a + m * K;
        const double* br = b + m * N;
        for (std::int64_t k = 0; k < K; ++k) {
            double av = ar[k];
            double* cr = c + k * N;
            for (std::int64_t n = 0; n < N; ++n) cr[n] += av * br[n];
        }
    }
}

// bt[N,M] = b[M,N]^T
inline void transpose(const double* b, double* bt, std::int64_t M, std::int64_t N) {
    for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t n = 0; n < N; ++n) bt[n * M + m] = b[m * N + n];
}

}  // namespace detail

// Value-semantic handle to a dense row-major f64 array with an optional
// same-shape gradient accumulator.
class Tensor {
public:
    Tensor() : node_(nullptr) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return alloc(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        return alloc(std::move(shape), value, requires_grad);
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode>();
        t.node_->shape = std::move(shape);
        if (detail::numel_of(t.node_->shape) != static_cast<std::int64_t>(values.size()))
            throw std::invalid_argument("Tensor::from: shape " + detail::shape_str(t.node_->shape) +
                                        " does not match " + std::to_string(values.size()) + " values");
        t.node_->data = std::move(values);
        if (requires_grad) t.enable_grad();
        return t;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, double stddev, RngStream& rng, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& x : t.node_->data) x = rng.normal(0.0, stddev);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
    std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t ndim() const { return node_->shape.size(); }

    std::span<double> data() { return node_->data; }
    std::span<const double> data() const { return node_->data; }

    bool requires_grad() const { return node_ && node_->requires_grad; }

    void enable_grad() {
        node_->requires_grad = true;
        if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
    }

    std::span<double> grad() {
        if (!requires_grad()) throw std::logic_error("Tensor::grad: tensor does not require grad");
        return node_->grad;
    }
    std::span<const double> grad() const {
        if (!requires_grad()) throw std::logic_error("Tensor::grad: tensor does not require grad");
        return node_->grad;
    }

    void zero_grad() {
        if (requires_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    double item() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor is not scalar");
        return node_->data[0];
    }

    /// True when the two handles share storage.
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    void assert_finite(const std::string& what) const {
        for (double v : node_->data)
            if (!std::isfinite(v)) throw NumericalError("non-finite value in " + what);
    }

private:
    static Tensor alloc(Shape shape, double fill, bool requires_grad) {
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode>();
        std::int64_t n = detail::numel_of(shape);
        if (n < 0) throw std::invalid_argument("Tensor: negative dimension in " + detail::shape_str(shape));
        t.node_->shape = std::move(shape);
        t.node_->data.assign(static_cast<std::size_t>(n), fill);
        if (requires_grad) t.enable_grad();
        return t;
    }

    std::shared_ptr<detail::TensorNode> node_;
};

// Linear record of executed ops. Entries are appended in execution order, so
// inputs of an op always precede it; replaying in reverse visits each node
// once. backward() first clears the gradients of every recorded output, so
// repeated calls on one tape propagate only the freshly seeded loss while
// leaf gradients keep accumulating.
class Tape {
public:
    void record(Tensor output, std::function<void()> backward_step) {
        entries_.push_back({std::move(output), std::move(backward_step)});
    }

    void backward(const Tensor& loss) {
        if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
        if (!loss.requires_grad())
            throw std::logic_error("backward: loss is not connected to any recorded op");
        for (auto& e : entries_) e.output.zero_grad();
        Tensor seed = loss;
        seed.grad()[0] = 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->step();
    }

    void clear() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }

private:
    struct Entry {
        Tensor output;
        std::function<void()> step;
    };
    std::vector<Entry> entries_;
};

/// Populates gradients of every requires_grad tensor reachable from `loss`.
inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

enum class EwOp { add, sub, mul };

namespace detail {

// b broadcasts onto a when b's shape is a trailing suffix of a's shape
// (or b is scalar).
inline bool trailing_broadcastable(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    for (std::size_t i = 0; i < b.size(); ++i)
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
    return true;
}

inline void reduce_to_suffix(const double* g, double* out,
                             std::int64_t repeats, std::int64_t block) {
    for (std::int64_t r = 0; r < repeats; ++r) {
        const double* gr = g + r * block;
        for (std::int64_t i = 0; i < block; ++i) out[i] += gr[i];
    }
}

}  // namespace detail

inline Tensor elementwise(Tape* tape, EwOp op, const Tensor& a, const Tensor& b) {
    bool scalar_b = b.numel() == 1;
    if (!scalar_b && !detail::trailing_broadcastable(a.shape(), b.shape()))
        throw std::invalid_argument("elementwise: shape mismatch " + detail::shape_str(a.shape()) +
                                    " vs " + detail::shape_str(b.shape()));
    std::int64_t n = a.numel();
    std::int64_t block = scalar_b ? 1 : b.numel();
    Tensor out = Tensor::zeros(a.shape());
    {
        auto av = a.data();
        auto bv = b.data();
        auto ov = out.data();
        auto apply = [op](double x, double y) {
            switch (op) {
                case EwOp::add: return x + y;
                case EwOp::sub: return x - y;
                default: return x * y;
            }
        };
        if (block == n) {
            switch (op) {
                case EwOp::add:
                    for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
                    break;
                case EwOp::sub:
                    for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
                    break;
                case EwOp::mul:
                    for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
                    break;
            }
        } else if (block == 1) {
            double s = bv[0];
            switch (op) {
                case EwOp::add:
                    for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] + s;
                    break;
                case EwOp::sub:
                    for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] - s;
                    break;
                case EwOp::mul:
                    for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] * s;
                    break;
            }
        } else {
            for (std::int64_t r = 0; r < n / block; ++r)
                for (std::int64_t j = 0; j < block; ++j)
                    ov[r * block + j] = apply(av[r * block + j], bv[j]);
        }
    }
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.enable_grad();
        Tensor ac = a, bc = b, oc = out;
        tape->record(out, [op, ac, bc, oc, n, block]() mutable {
            auto g = oc.grad();
            if (ac.requires_grad()) {
                auto ga = ac.grad();
                if (op == EwOp::mul) {
                    auto bv = bc.data();
                    if (block == n)
                        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
                    else
                        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i % block];
                } else {
                    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
                }
            }
            if (bc.requires_grad()) {
                auto gb = bc.grad();
                if (op == EwOp::mul) {
                    auto av = ac.data();
                    if (block == n)
                        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
                    else
                        for (std::int64_t i = 0; i < n; ++i) gb[i % block] += g[i] * av[i];
                } else if (op == EwOp::sub) {
                    if (block == n)
                        for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i];
                    else
                        for (std::int64_t i = 0; i < n; ++i) gb[i % block] -= g[i];
                } else {
                    if (block == n)
                        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i];
                    else
                        for (std::int64_t i = 0; i < n; ++i) gb[i % block] += g[i];
                }
            }
        });
    }
    return out;
}

inline Tensor add(Tape* t, const Tensor& a, const Tensor& b) { return elementwise(t, EwOp::add, a, b); }
inline Tensor sub(Tape* t, const Tensor& a, const Tensor& b) { return elementwise(t, EwOp::sub, a, b); }
inline Tensor mul(Tape* t, const Tensor& a, const Tensor& b) { return elementwise(t, EwOp::mul, a, b); }
inline Tensor add(Tape* t, const Tensor& a, double s) { return elementwise(t, EwOp::add, a, Tensor::scalar(s)); }
inline Tensor sub(Tape* t, const Tensor& a, double s) { return elementwise(t, EwOp::sub, a, Tensor::scalar(s)); }
inline Tensor mul(Tape* t, const Tensor& a, double s) { return elementwise(t, EwOp::mul, a, Tensor::scalar(s)); }

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// a: [*, m, k], b: [k, n] or [*, k, n] with matching leading dims.
inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw std::invalid_argument("matmul: operands must have >= 2 dims");
    std::int64_t m = a.shape()[a.ndim() - 2];
    std::int64_t k = a.shape()[a.ndim() - 1];
    std::int64_t kb = b.shape()[b.ndim() - 2];
    std::int64_t n = b.shape()[b.ndim() - 1];
    if (k != kb)
        throw std::invalid_argument("matmul: inner dimension mismatch " + detail::shape_str(a.shape()) +
                                    " vs " + detail::shape_str(b.shape()));
    std::int64_t batch = 1;
    for (std::size_t i = 0; i + 2 < a.ndim(); ++i) batch *= a.shape()[i];
    bool batched_b = b.ndim() > 2;
    if (batched_b) {
        if (a.ndim() != b.ndim())
            throw std::invalid_argument("matmul: batched operands must have equal rank");
        std::int64_t batch_b = 1;
        for (std::size_t i = 0; i + 2 < b.ndim(); ++i) batch_b *= b.shape()[i];
        if (batch_b != batch ||
            !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
            throw std::invalid_argument("matmul: leading dims mismatch");
    }

    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(out_shape);
    {
        const double* ap = a.data().data();
        const double* bp = b.data().data();
        double* op = out.data().data();
        for (std::int64_t s = 0; s < batch; ++s)
            detail::gemm_nn(ap + s * m * k, bp + (batched_b ? s * k * n : 0), op + s * m * n, m, k, n);
    }
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.enable_grad();
        Tensor ac = a, bc = b, oc = out;
        tape->record(out, [ac, bc, oc, m, k, n, batch, batched_b]() mutable {
            const double* g = oc.grad().data();
            // dA = G B^T: transpose the (small) rhs once per slice, then NN.
            if (ac.requires_grad()) {
                double* ga = ac.grad().data();
                const double* bp = bc.data().data();
                std::vector<double> bt(static_cast<std::size_t>(k * n));
                for (std::int64_t s = 0; s < batch; ++s) {
                    const double* bs = bp + (batched_b ? s * k * n : 0);
                    if (s == 0 || batched_b) detail::transpose(bs, bt.data(), k, n);
                    detail::gemm_nn(g + s * m * n, bt.data(), ga + s * m * k, m, n, k);
                }
            }
            // dB = A^T G
            if (bc.requires_grad()) {
                double* gb = bc.grad().data();
                const double* ap = ac.data().data();
                for (std::int64_t s = 0; s < batch; ++s)
                    detail::gemm_tn(ap + s * m * k, g + s * m * n,
                                    gb + (batched_b ? s * k * n : 0), m, k, n);
            }
        });
    }
    return out;
}

/// Swaps the last two axes.
inline Tensor transpose_last2(Tape* tape, const Tensor& x) {
    if (x.ndim() < 2) throw std::invalid_argument("transpose_last2: needs >= 2 dims");
    std::int64_t m = x.shape()[x.ndim() - 2];
    std::int64_t n = x.shape()[x.ndim() - 1];
    std::int64_t batch = x.numel() / (m * n);
    Shape out_shape = x.shape();
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    Tensor out = Tensor::zeros(out_shape);
    const double* xp = x.data().data();
    double* op = out.data().data();
    for (std::int64_t s = 0; s < batch; ++s) detail::transpose(xp + s * m * n, op + s * m * n, m, n);
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc, m, n, batch]() mutable {
            const double* g = oc.grad().data();
            double* gx = xc.grad().data();
            for (std::int64_t s = 0; s < batch; ++s) {
                const double* gs = g + s * m * n;
                double* xs = gx + s * m * n;
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < m; ++j) xs[j * n + i] += gs[i * m + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// row-structured ops
// ---------------------------------------------------------------------------

namespace detail {
inline std::pair<std::int64_t, std::int64_t> rows_cols(const Tensor& x) {
    std::int64_t cols = x.shape().back();
    return {x.numel() / cols, cols};
}
}  // namespace detail

/// Numerically stable softmax over the last dimension. A row whose entries
/// are all -inf (every key excluded) is an error.
inline Tensor softmax_lastdim(Tape* tape, const Tensor& x) {
    auto [rows, cols] = detail::rows_cols(x);
    if (cols < 1) throw std::invalid_argument("softmax_lastdim: empty last dim");
    Tensor out = Tensor::zeros(x.shape());
    {
        auto xv = x.data();
        auto ov = out.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* xr = xv.data() + r * cols;
            double* orow = ov.data() + r * cols;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t c = 0; c < cols; ++c) mx = std::max(mx, xr[c]);
            if (!std::isfinite(mx))
                throw NumericalError("softmax_lastdim: row has no finite entry (all keys excluded?)");
            double sum = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) {
                orow[c] = std::exp(xr[c] - mx);
                sum += orow[c];
            }
            for (std::int64_t c = 0; c < cols; ++c) orow[c] /= sum;
        }
    }
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc, rows, cols]() mutable {
            auto g = oc.grad();
            auto y = oc.data();
            auto gx = xc.grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * cols;
                const double* yr = y.data() + r * cols;
                double* xr = gx.data() + r * cols;
                double dot = 0.0;
                for (std::int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                for (std::int64_t c = 0; c < cols; ++c) xr[c] += yr[c] * (gr[c] - dot);
            }
        });
    }
    return out;
}

/// Per-last-dim-slice (x - mean) / sqrt(var + eps) * gain + bias with the
/// population variance.
inline Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    auto [rows, cols] = detail::rows_cols(x);
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
    if (gain.numel() != cols || bias.numel() != cols)
        throw std::invalid_argument("layer_norm: gain/bias must match last dim");
    Tensor out = Tensor::zeros(x.shape());
    Tensor xhat = Tensor::zeros(x.shape());       // saved for backward
    std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
    {
        auto xv = x.data();
        auto gv = gain.data();
        auto bv = bias.data();
        auto ov = out.data();
        auto hv = xhat.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* xr = xv.data() + r * cols;
            double mean = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) mean += xr[c];
            mean /= static_cast<double>(cols);
            double var = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) {
                double d = xr[c] - mean;
                var += d * d;
            }
            var /= static_cast<double>(cols);
            double is = 1.0 / std::sqrt(var + eps);
            inv_sigma[static_cast<std::size_t>(r)] = is;
            double* hr = hv.data() + r * cols;
            double* orow = ov.data() + r * cols;
            for (std::int64_t c = 0; c < cols; ++c) {
                hr[c] = (xr[c] - mean) * is;
                orow[c] = hr[c] * gv[c] + bv[c];
            }
        }
    }
    if (tape && (x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
        out.enable_grad();
        Tensor xc = x, gc = gain, bc = bias, oc = out, hc = xhat;
        tape->record(out, [xc, gc, bc, oc, hc, rows, cols, inv_sigma = std::move(inv_sigma)]() mutable {
            auto g = oc.grad();
            auto h = hc.data();
            auto gv = gc.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * cols;
                const double* hr = h.data() + r * cols;
                if (xc.requires_grad()) {
                    double* xr = xc.grad().data() + r * cols;
                    double is = inv_sigma[static_cast<std::size_t>(r)];
                    double mean_gy = 0.0, mean_gyh = 0.0;
                    for (std::int64_t c = 0; c < cols; ++c) {
                        double gy = gr[c] * gv[c];
                        mean_gy += gy;
                        mean_gyh += gy * hr[c];
                    }
                    mean_gy /= static_cast<double>(cols);
                    mean_gyh /= static_cast<double>(cols);
                    for (std::int64_t c = 0; c < cols; ++c) {
                        double gy = gr[c] * gv[c];
                        xr[c] += is * (gy - mean_gy - hr[c] * mean_gyh);
                    }
                }
                if (gc.requires_grad()) {
                    double* gg = gc.grad().data();
                    for (std::int64_t c = 0; c < cols; ++c) gg[c] += gr[c] * hr[c];
                }
                if (bc.requires_grad()) {
                    double* gb = bc.grad().data();
                    for (std::int64_t c = 0; c < cols; ++c) gb[c] += gr[c];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

enum class ActKind { gelu, relu };

namespace detail {
inline constexpr double kGeluC = 0.044715;
}

inline Tensor activation(Tape* tape, ActKind kind, const Tensor& x) {
    std::int64_t n = x.numel();
    Tensor out = Tensor::zeros(x.shape());
    {
        auto xv = x.data();
        auto ov = out.data();
        if (kind == ActKind::relu) {
            for (std::int64_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
        } else {
            const double c = std::sqrt(2.0 / std::numbers::pi);
            for (std::int64_t i = 0; i < n; ++i) {
                double v = xv[i];
                double u = c * (v + detail::kGeluC * v * v * v);
                ov[i] = 0.5 * v * (1.0 + std::tanh(u));
            }
        }
    }
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [kind, xc, oc, n]() mutable {
            auto g = oc.grad();
            auto xv = xc.data();
            auto gx = xc.grad();
            if (kind == ActKind::relu) {
                for (std::int64_t i = 0; i < n; ++i)
                    if (xv[i] > 0.0) gx[i] += g[i];
            } else {
                const double c = std::sqrt(2.0 / std::numbers::pi);
                for (std::int64_t i = 0; i < n; ++i) {
                    double v = xv[i];
                    double u = c * (v + detail::kGeluC * v * v * v);
                    double t = std::tanh(u);
                    double sech2 = 1.0 - t * t;
                    double du = c * (1.0 + 3.0 * detail::kGeluC * v * v);
                    gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
                }
            }
        });
    }
    return out;
}

inline Tensor gelu(Tape* t, const Tensor& x) { return activation(t, ActKind::gelu, x); }
inline Tensor relu(Tape* t, const Tensor& x) { return activation(t, ActKind::relu, x); }

/// In training mode zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate); identity in eval mode.
inline Tensor dropout(Tape* tape, const Tensor& x, double rate, RngStream& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (!training || rate == 0.0) return x;
    std::int64_t n = x.numel();
    double scale = 1.0 / (1.0 - rate);
    std::vector<double> keep(static_cast<std::size_t>(n));
    for (auto& kv : keep) kv = rng.uniform() < rate ? 0.0 : scale;
    Tensor out = Tensor::zeros(x.shape());
    {
        auto xv = x.data();
        auto ov = out.data();
        for (std::int64_t i = 0; i < n; ++i) ov[i] = xv[i] * keep[static_cast<std::size_t>(i)];
    }
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc, n, keep = std::move(keep)]() mutable {
            auto g = oc.grad();
            auto gx = xc.grad();
            for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * keep[static_cast<std::size_t>(i)];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(Tape* tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s);
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc]() mutable {
            double g = oc.grad()[0];
            auto gx = xc.grad();
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

/// Mean of squared differences over positions with nonzero weight. `weights`,
/// when given, must be a leading-prefix shape of pred; each weight covers the
/// trailing block of elements at that position.
inline Tensor mse_loss(Tape* tape, const Tensor& pred, const Tensor& target,
                       const Tensor* weights = nullptr) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("mse_loss: pred/target shape mismatch");
    std::int64_t n = pred.numel();
    std::int64_t block = 1;
    if (weights) {
        const Shape& ps = pred.shape();
        const Shape& ws = weights->shape();
        if (ws.size() > ps.size() || !std::equal(ws.begin(), ws.end(), ps.begin()))
            throw std::invalid_argument("mse_loss: weights must be a leading prefix of pred's shape");
        block = n / weights->numel();
    }
    double wsum = 0.0, acc = 0.0;
    {
        auto pv = pred.data();
        auto tv = target.data();
        for (std::int64_t i = 0; i < n; ++i) {
            double w = weights ? weights->data()[i / block] : 1.0;
            if (w == 0.0) continue;
            double d = pv[i] - tv[i];
            acc += w * d * d;
            wsum += w;
        }
    }
    if (wsum == 0.0) throw std::invalid_argument("mse_loss: all weights are zero");
    Tensor out = Tensor::scalar(acc / wsum);
    out.assert_finite("mse_loss");
    if (tape && (pred.requires_grad() || target.requires_grad())) {
        out.enable_grad();
        Tensor pc = pred, tc = target, oc = out;
        Tensor wc = weights ? *weights : Tensor();
        tape->record(out, [pc, tc, oc, wc, n, block, wsum]() mutable {
            double g = oc.grad()[0];
            auto pv = pc.data();
            auto tv = tc.data();
            for (std::int64_t i = 0; i < n; ++i) {
                double w = wc.defined() ? wc.data()[i / block] : 1.0;
                if (w == 0.0) continue;
                double d = 2.0 * w * (pv[i] - tv[i]) * g / wsum;
                if (pc.requires_grad()) pc.grad()[i] += d;
                if (tc.requires_grad()) tc.grad()[i] -= d;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape / assembly ops
// ---------------------------------------------------------------------------

inline Tensor reshape(Tape* tape, const Tensor& x, Shape shape) {
    if (detail::numel_of(shape) != x.numel())
        throw std::invalid_argument("reshape: element count mismatch " + detail::shape_str(x.shape()) +
                                    " -> " + detail::shape_str(shape));
    Tensor out = Tensor::zeros(std::move(shape));
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc]() mutable {
            auto g = oc.grad();
            auto gx = xc.grad();
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(g.size()); ++i) gx[i] += g[i];
        });
    }
    return out;
}

/// Slice along dim 1 of a [B, T, d] tensor.
inline Tensor slice_dim1(Tape* tape, const Tensor& x, std::int64_t start, std::int64_t len) {
    if (x.ndim() != 3) throw std::invalid_argument("slice_dim1: expects [B, T, d]");
    std::int64_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
    if (start < 0 || len < 0 || start + len > T) throw std::invalid_argument("slice_dim1: out of range");
    Tensor out = Tensor::zeros({B, len, d});
    {
        const double* xp = x.data().data();
        double* op = out.data().data();
        for (std::int64_t b = 0; b < B; ++b)
            std::memcpy(op + b * len * d, xp + (b * T + start) * d,
                        static_cast<std::size_t>(len * d) * sizeof(double));
    }
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc, B, T, d, start, len]() mutable {
            const double* g = oc.grad().data();
            double* gx = xc.grad().data();
            for (std::int64_t b = 0; b < B; ++b) {
                const double* gs = g + b * len * d;
                double* xs = gx + (b * T + start) * d;
                for (std::int64_t i = 0; i < len * d; ++i) xs[i] += gs[i];
            }
        });
    }
    return out;
}

/// Concatenate [B, Ti, d] tensors along dim 1.
inline Tensor concat_dim1(Tape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_dim1: no parts");
    std::int64_t B = parts[0].dim(0), d = parts[0].dim(2), T = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 3 || p.dim(0) != B || p.dim(2) != d)
            throw std::invalid_argument("concat_dim1: incompatible part shapes");
        T += p.dim(1);
    }
    Tensor out = Tensor::zeros({B, T, d});
    bool any_grad = false;
    {
        double* op = out.data().data();
        std::int64_t off = 0;
        for (const auto& p : parts) {
            std::int64_t ti = p.dim(1);
            const double* pp = p.data().data();
            for (std::int64_t b = 0; b < B; ++b)
                std::memcpy(op + (b * T + off) * d, pp + b * ti * d,
                            static_cast<std::size_t>(ti * d) * sizeof(double));
            off += ti;
            any_grad = any_grad || p.requires_grad();
        }
    }
    if (tape && any_grad) {
        out.enable_grad();
        std::vector<Tensor> pc = parts;
        Tensor oc = out;
        tape->record(out, [pc, oc, B, T, d]() mutable {
            const double* g = oc.grad().data();
            std::int64_t off = 0;
            for (auto& p : pc) {
                std::int64_t ti = p.dim(1);
                if (p.requires_grad()) {
                    double* gp = p.grad().data();
                    for (std::int64_t b = 0; b < B; ++b) {
                        const double* gs = g + (b * T + off) * d;
                        double* ps = gp + b * ti * d;
                        for (std::int64_t i = 0; i < ti * d; ++i) ps[i] += gs[i];
                    }
                }
                off += ti;
            }
        });
    }
    return out;
}

/// Repeat a [T, d] tensor across a new leading batch dim -> [B, T, d].
inline Tensor tile_batch(Tape* tape, const Tensor& x, std::int64_t B) {
    if (x.ndim() != 2) throw std::invalid_argument("tile_batch: expects [T, d]");
    std::int64_t block = x.numel();
    Tensor out = Tensor::zeros({B, x.dim(0), x.dim(1)});
    {
        const double* xp = x.data().data();
        double* op = out.data().data();
        for (std::int64_t b = 0; b < B; ++b)
            std::memcpy(op + b * block, xp, static_cast<std::size_t>(block) * sizeof(double));
    }
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc, B, block]() mutable {
            const double* g = oc.grad().data();
            double* gx = xc.grad().data();
            detail::reduce_to_suffix(g, gx, B, block);
        });
    }
    return out;
}

/// Broadcast a [d] vector to [R, d] rows.
inline Tensor tile_rows(Tape* tape, const Tensor& v, std::int64_t rows) {
    if (v.ndim() != 1) throw std::invalid_argument("tile_rows: expects [d]");
    std::int64_t d = v.numel();
    Tensor out = Tensor::zeros({rows, d});
    {
        const double* vp = v.data().data();
        double* op = out.data().data();
        for (std::int64_t r = 0; r < rows; ++r)
            std::memcpy(op + r * d, vp, static_cast<std::size_t>(d) * sizeof(double));
    }
    if (tape && v.requires_grad()) {
        out.enable_grad();
        Tensor vc = v, oc = out;
        tape->record(out, [vc, oc, rows, d]() mutable {
            const double* g = oc.grad().data();
            double* gv = vc.grad().data();
            detail::reduce_to_suffix(g, gv, rows, d);
        });
    }
    return out;
}

/// Scale each row of [R, C] by the corresponding entry of a length-R vector
/// (the vector is a constant, no gradient flows into it).
inline Tensor scale_rows(Tape* tape, const Tensor& x, const std::vector<double>& s) {
    auto [rows, cols] = detail::rows_cols(x);
    if (static_cast<std::int64_t>(s.size()) != rows)
        throw std::invalid_argument("scale_rows: scale length mismatch");
    Tensor out = Tensor::zeros(x.shape());
    {
        auto xv = x.data();
        auto ov = out.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            double sv = s[static_cast<std::size_t>(r)];
            for (std::int64_t c = 0; c < cols; ++c) ov[r * cols + c] = xv[r * cols + c] * sv;
        }
    }
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc, rows, cols, s]() mutable {
            auto g = oc.grad();
            auto gx = xc.grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                double sv = s[static_cast<std::size_t>(r)];
                for (std::int64_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] * sv;
            }
        });
    }
    return out;
}

/// Interleave two [B, T, d] tensors along dim 1: rows a_1, b_1, a_2, b_2, ...
inline Tensor interleave_dim1(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || a.shape() != b.shape())
        throw std::invalid_argument("interleave_dim1: expects two equal [B, T, d] tensors");
    std::int64_t B = a.dim(0), T = a.dim(1), d = a.dim(2);
    Tensor out = Tensor::zeros({B, 2 * T, d});
    {
        const double* ap = a.data().data();
        const double* bp = b.data().data();
        double* op = out.data().data();
        for (std::int64_t x = 0; x < B; ++x)
            for (std::int64_t t = 0; t < T; ++t) {
                std::memcpy(op + (x * 2 * T + 2 * t) * d, ap + (x * T + t) * d,
                            static_cast<std::size_t>(d) * sizeof(double));
                std::memcpy(op + (x * 2 * T + 2 * t + 1) * d, bp + (x * T + t) * d,
                            static_cast<std::size_t>(d) * sizeof(double));
            }
    }
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.enable_grad();
        Tensor ac = a, bc = b, oc = out;
        tape->record(out, [ac, bc, oc, B, T, d]() mutable {
            const double* g = oc.grad().data();
            for (std::int64_t x = 0; x < B; ++x)
                for (std::int64_t t = 0; t < T; ++t) {
                    if (ac.requires_grad()) {
                        double* ga = ac.grad().data() + (x * T + t) * d;
                        const double* gs = g + (x * 2 * T + 2 * t) * d;
                        for (std::int64_t i = 0; i < d; ++i) ga[i] += gs[i];
                    }
                    if (bc.requires_grad()) {
                        double* gb = bc.grad().data() + (x * T + t) * d;
                        const double* gs = g + (x * 2 * T + 2 * t + 1) * d;
                        for (std::int64_t i = 0; i < d; ++i) gb[i] += gs[i];
                    }
                }
        });
    }
    return out;
}

/// Inverse of interleave_dim1: picks every second row starting at `offset`.
inline Tensor deinterleave_dim1(Tape* tape, const Tensor& x, std::int64_t offset) {
    if (x.ndim() != 3 || x.dim(1) % 2 != 0 || (offset != 0 && offset != 1))
        throw std::invalid_argument("deinterleave_dim1: expects [B, 2T, d] and offset 0/1");
    std::int64_t B = x.dim(0), T2 = x.dim(1), d = x.dim(2), T = T2 / 2;
    Tensor out = Tensor::zeros({B, T, d});
    {
        const double* xp = x.data().data();
        double* op = out.data().data();
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < T; ++t)
                std::memcpy(op + (b * T + t) * d, xp + (b * T2 + 2 * t + offset) * d,
                            static_cast<std::size_t>(d) * sizeof(double));
    }
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc, B, T2, T, d, offset]() mutable {
            const double* g = oc.grad().data();
            double* gx = xc.grad().data();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t t = 0; t < T; ++t) {
                    const double* gs = g + (b * T + t) * d;
                    double* xs = gx + (b * T2 + 2 * t + offset) * d;
                    for (std::int64_t i = 0; i < d; ++i) xs[i] += gs[i];
                }
        });
    }
    return out;
}

/// [B, T, d] -> [B*h, T, d/h]: regroups the feature dim into heads.
inline Tensor split_heads(Tape* tape, const Tensor& x, std::int64_t h) {
    if (x.ndim() != 3) throw std::invalid_argument("split_heads: expects [B, T, d]");
    std::int64_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
    if (d % h != 0) throw std::invalid_argument("split_heads: d not divisible by heads");
    std::int64_t hd = d / h;
    Tensor out = Tensor::zeros({B * h, T, hd});
    {
        const double* xp = x.data().data();
        double* op = out.data().data();
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t t = 0; t < T; ++t)
                    std::memcpy(op + ((b * h + i) * T + t) * hd, xp + (b * T + t) * d + i * hd,
                                static_cast<std::size_t>(hd) * sizeof(double));
    }
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc, B, T, d, h, hd]() mutable {
            const double* g = oc.grad().data();
            double* gx = xc.grad().data();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t t = 0; t < T; ++t) {
                        const double* gs = g + ((b * h + i) * T + t) * hd;
                        double* xs = gx + (b * T + t) * d + i * hd;
                        for (std::int64_t c = 0; c < hd; ++c) xs[c] += gs[c];
                    }
        });
    }
    return out;
}

/// Inverse of split_heads: [B*h, T, hd] -> [B, T, h*hd].
inline Tensor merge_heads(Tape* tape, const Tensor& x, std::int64_t h) {
    if (x.ndim() != 3) throw std::invalid_argument("merge_heads: expects [B*h, T, hd]");
    if (x.dim(0) % h != 0) throw std::invalid_argument("merge_heads: batch not divisible by heads");
    std::int64_t B = x.dim(0) / h, T = x.dim(1), hd = x.dim(2), d = h * hd;
    Tensor out = Tensor::zeros({B, T, d});
    {
        const double* xp = x.data().data();
        double* op = out.data().data();
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t t = 0; t < T; ++t)
                    std::memcpy(op + (b * T + t) * d + i * hd, xp + ((b * h + i) * T + t) * hd,
                                static_cast<std::size_t>(hd) * sizeof(double));
    }
    if (tape && x.requires_grad()) {
        out.enable_grad();
        Tensor xc = x, oc = out;
        tape->record(out, [xc, oc, B, T, d, h, hd]() mutable {
            const double* g = oc.grad().data();
            double* gx = xc.grad().data();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t t = 0; t < T; ++t) {
                        const double* gs = g + (b * T + t) * d + i * hd;
                        double* xs = gx + ((b * h + i) * T + t) * hd;
                        for (std::int64_t c = 0; c < hd; ++c) xs[c] += gs[c];
                    }
        });
    }
    return out;
}

}  // namespace gcpc
