#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffmix/oracle.hpp"
#include "diffmix/sampler.hpp"
#include "diffmix/segmentation.hpp"

namespace diffmix {

// One region of the fusion stage: which model and condition drive the
// pixels this mask owns. The background region conventionally binds the
// base model with the multi-object condition.
struct ConceptBinding {
    int concept_id = 0;
    const TemplateMixtureModel* model = nullptr;
    ConditionSpec condition;
    PixelMask region;
};

// Where the per-step denoised estimates get mixed. `denoised` composes the
// per-concept posterior-mean estimates under the region masks and renoises
// with the shared unconditional noise; `noise` composes the guided noise
// predictions instead and runs a vanilla step on the composite (the
// ablation arm).
enum class MixSpace { denoised, noise };

// Observer for per-step denoised snapshots (trajectory dumps).
using StepObserver = std::function<void(int t, const Grid& xhat)>;

namespace detail {

inline void check_bindings(const std::vector<ConceptBinding>& bindings, const GridShape& shape) {
    if (bindings.empty()) throw std::invalid_argument("fused_step: no bindings");
    PixelMask owners(shape.height, shape.width);
    for (const auto& b : bindings) {
        if (b.model == nullptr) {
            throw std::invalid_argument("binding for concept " + std::to_string(b.concept_id) +
                                        " has no model");
        }
        if (b.region.height != shape.height || b.region.width != shape.width) {
            throw ShapeError("binding mask for concept " + std::to_string(b.concept_id) +
                             " does not match the grid");
        }
        for (std::size_t i = 0; i < owners.on.size(); ++i) owners.on[i] += b.region.on[i] ? 1 : 0;
    }
    for (auto v : owners.on) {
        if (v != 1) {
            throw std::invalid_argument(
                "fused_step: binding masks must partition the grid exactly");
        }
    }
}

inline void masked_accumulate(Grid& acc, const Grid& src, const PixelMask& mask) {
    for (int r = 0; r < acc.height(); ++r) {
        for (int c = 0; c < acc.width(); ++c) {
            if (!mask.at(r, c)) continue;
            for (int ch = 0; ch < acc.channels(); ++ch) acc.at(r, c, ch) = src.at(r, c, ch);
        }
    }
}

} // namespace detail

// One fusion step. The unconditional noise comes from the base model once
// and is shared across every binding; per binding i the guided noise is
//   eps_i = eps_uncond + lambda * (eps_model_i(c_i) - eps_uncond)
// and the region masks select the per-concept Tweedie estimates:
//   z_{t-1} = sqrt(ab_{t-1}) * sum_i M_i . x0hat[eps_i]
//           + sqrt(1-ab_{t-1}) * eps_uncond.
// Masks must partition the grid; that is checked before any model call.
inline SamplerState fused_step(const SamplerState& state,
                               const std::vector<ConceptBinding>& bindings,
                               const TemplateMixtureModel& base, double lambda,
                               const NoiseSchedule& s, MixSpace mix = MixSpace::denoised,
                               const StepObserver& observe = {}) {
    detail::check_bindings(bindings, state.z.shape());

    const Grid eps_uncond = base.epsilon(state.z, state.t, ConditionSpec::null_condition());

    Grid mixed(state.z.shape()); // fused x0hat, or fused eps in noise space
    for (const auto& b : bindings) {
        Grid eps_i = eps_uncond;
        Grid diff = b.model->epsilon(state.z, state.t, b.condition);
        diff -= eps_uncond;
        axpy(lambda, diff, eps_i);
        if (mix == MixSpace::denoised) {
            detail::masked_accumulate(mixed, tweedie_denoise(state.z, state.t, eps_i, s),
                                      b.region);
        } else {
            detail::masked_accumulate(mixed, eps_i, b.region);
        }
    }

    Grid next;
    if (mix == MixSpace::denoised) {
        if (observe) observe(state.t, mixed);
        const auto [sab_prev, somb_prev] = snr_coefficients(s, state.t - 1);
        next = mixed;
        next *= sab_prev;
        axpy(somb_prev, eps_uncond, next);
    } else {
        if (observe) observe(state.t, tweedie_denoise(state.z, state.t, mixed, s));
        next = ddim_step(state.z, state.t, mixed, mixed, s);
    }
    return {std::move(next), state.t - 1, state.seed};
}

// Runs fused steps from the current timestep down to 1 and returns the
// final clean sample (the t=1 step lands on the denoised estimate since
// alpha_bar_0 = 1).
inline Grid run_fusion_phase(SamplerState state, const std::vector<ConceptBinding>& bindings,
                             const TemplateMixtureModel& base, double lambda,
                             const NoiseSchedule& s, MixSpace mix = MixSpace::denoised,
                             const StepObserver& observe = {}) {
    while (state.t >= 1) {
        state = fused_step(state, bindings, base, lambda, s, mix, observe);
    }
    return state.z;
}

} // namespace diffmix
