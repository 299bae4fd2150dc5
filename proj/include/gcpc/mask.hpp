#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcpc/rng.hpp"

namespace gcpc {

// The five trajectory-representation objectives, distinguished by how the
// history/future segments are masked on input and which segments are
// reconstruction targets:
//
//              input history    input future     reconstruct
//   AE-H       unmasked         --               history
//   MAE-H      randomly masked  --               history
//   MAE-F      unmasked         fully masked     history + future
//   MAE-RC     randomly masked  fully masked     history + future
//   MAE-ALL    randomly masked  randomly masked  history + future
enum class Objective { ae_h, mae_h, mae_f, mae_rc, mae_all };

inline std::string to_string(Objective o) {
    switch (o) {
        case Objective::ae_h: return "ae-h";
        case Objective::mae_h: return "mae-h";
        case Objective::mae_f: return "mae-f";
        case Objective::mae_rc: return "mae-rc";
        case Objective::mae_all: return "mae-all";
    }
    return "?";
}

inline Objective objective_from_string(const std::string& s) {
    if (s == "ae-h") return Objective::ae_h;
    if (s == "mae-h") return Objective::mae_h;
    if (s == "mae-f") return Objective::mae_f;
    if (s == "mae-rc") return Objective::mae_rc;
    if (s == "mae-all") return Objective::mae_all;
    throw std::invalid_argument("unknown objective '" + s + "' (expected one of ae-h, mae-h, mae-f, mae-rc, mae-all)");
}

/// True when the objective's input layout includes a future segment.
inline bool objective_has_future(Objective o) { return o != Objective::ae_h && o != Objective::mae_h; }

/// True when the objective draws a dynamic mask ratio.
inline bool objective_has_random_segment(Objective o) {
    return o == Objective::mae_h || o == Objective::mae_rc || o == Objective::mae_all;
}

struct MaskSpec {
    Objective objective = Objective::mae_rc;
    // Flags over the window slots the objective puts in the input: k slots
    // for AE-H/MAE-H, k+p otherwise. 1 = masked.
    std::vector<std::uint8_t> input_mask;
    // Reconstruction-target flags over the same slots.
    std::vector<std::uint8_t> recon_target;
    double ratio = 0.0;  // realized dynamic mask ratio

    std::int64_t span() const { return static_cast<std::int64_t>(input_mask.size()); }
};

namespace detail {

// round(r * len) with r = idx/5, done in integers so the count is exact.
inline std::int64_t masked_count(std::int64_t ratio_idx, std::int64_t len) {
    return (2 * ratio_idx * len + 5) / 10;
}

inline void random_mask_segment(std::vector<std::uint8_t>& mask, std::size_t offset,
                                std::int64_t len, std::int64_t count, RngStream& rng) {
    auto perm = rng.permutation(static_cast<std::size_t>(len));
    for (std::int64_t i = 0; i < count; ++i) mask[offset + perm[static_cast<std::size_t>(i)]] = 1;
}

}  // namespace detail

/// Builds the per-sample mask layout. The dynamic ratio is drawn uniformly
/// from {0, 0.2, 0.4, 0.6, 0.8} whenever the objective has a randomly masked
/// segment; randomly masked segments mask exactly round(ratio * len)
/// positions without replacement.
inline MaskSpec build_mask(Objective objective, std::int64_t k, std::int64_t p, RngStream& rng) {
    if (k < 1) throw std::invalid_argument("build_mask: k must be >= 1");
    bool has_future = objective_has_future(objective);
    if (has_future && p < 1) throw std::invalid_argument("build_mask: p must be >= 1 for " + to_string(objective));

    MaskSpec spec;
    spec.objective = objective;
    std::int64_t span = has_future ? k + p : k;
    spec.input_mask.assign(static_cast<std::size_t>(span), 0);
    spec.recon_target.assign(static_cast<std::size_t>(span), 0);

    std::int64_t ratio_idx = 0;
    if (objective_has_random_segment(objective)) {
        ratio_idx = static_cast<std::int64_t>(rng.below(5));
        spec.ratio = 0.2 * static_cast<double>(ratio_idx);
    }

    switch (objective) {
        case Objective::ae_h:
            break;
        case Objective::mae_h:
            detail::random_mask_segment(spec.input_mask, 0, k, detail::masked_count(ratio_idx, k), rng);
            break;
        case Objective::mae_f:
            for (std::int64_t i = k; i < span; ++i) spec.input_mask[static_cast<std::size_t>(i)] = 1;
            break;
        case Objective::mae_rc:
            detail::random_mask_segment(spec.input_mask, 0, k, detail::masked_count(ratio_idx, k), rng);
            for (std::int64_t i = k; i < span; ++i) spec.input_mask[static_cast<std::size_t>(i)] = 1;
            break;
        case Objective::mae_all:
            detail::random_mask_segment(spec.input_mask, 0, k, detail::masked_count(ratio_idx, k), rng);
            detail::random_mask_segment(spec.input_mask, static_cast<std::size_t>(k), p,
                                        detail::masked_count(ratio_idx, p), rng);
            break;
    }

    // Reconstruct columns: history always, future for predictive objectives.
    for (std::int64_t i = 0; i < span; ++i) spec.recon_target[static_cast<std::size_t>(i)] = 1;
    return spec;
}

}  // namespace gcpc
