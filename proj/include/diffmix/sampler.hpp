#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include "diffmix/grid.hpp"
#include "diffmix/oracle.hpp"
#include "diffmix/rng.hpp"
#include "diffmix/schedule.hpp"

namespace diffmix {

enum class GuidanceMode { none, cfg, cfg_pp };

inline std::string to_string(GuidanceMode m) {
    switch (m) {
        case GuidanceMode::none: return "none";
        case GuidanceMode::cfg: return "cfg";
        case GuidanceMode::cfg_pp: return "cfg_pp";
    }
    return "?";
}

struct GuidanceConfig {
    GuidanceMode mode = GuidanceMode::cfg_pp;
    double scale = 0.6;

    // Config-load gate: cfg extrapolates (w >= 1), cfg_pp interpolates
    // (0 < scale <= 1). Direct API calls may use any scale.
    void validate() const {
        if (mode == GuidanceMode::cfg && scale < 1.0) {
            throw ConfigError("guidance.scale must be >= 1 for cfg, got " +
                              std::to_string(scale));
        }
        if (mode == GuidanceMode::cfg_pp && !(scale > 0.0 && scale <= 1.0)) {
            throw ConfigError("guidance.scale must be in (0,1] for cfg_pp, got " +
                              std::to_string(scale));
        }
    }
};

// Latent + timestep, plus the seed the trajectory was drawn from. Steps are
// deterministic; equal (seed, config) reproduce trajectories bit-exactly.
struct SamplerState {
    Grid z;
    int t = 0;
    std::uint64_t seed = 0;
};

inline SamplerState initial_state(const GridShape& shape, int num_steps, std::uint64_t seed) {
    SeededRng rng(seed);
    return SamplerState{rng.normal_grid(shape), num_steps, seed};
}

// x0hat = (z - sqrt(1 - ab_t) eps) / sqrt(ab_t)
inline Grid tweedie_denoise(const Grid& z, int t, const Grid& eps, const NoiseSchedule& s) {
    z.require_same_shape(eps, "tweedie_denoise");
    const auto [sab, somb] = snr_coefficients(s, t);
    Grid out = z;
    axpy(-somb, eps, out);
    out *= 1.0 / sab;
    return out;
}

// One reverse step: sqrt(ab_{t-1}) x0hat[eps_denoise] + sqrt(1-ab_{t-1}) eps_renoise.
// Same eps in both slots is the vanilla deterministic update; different ones
// give the split where denoising is guided and renoising stays unconditional.
inline Grid ddim_step(const Grid& z, int t, const Grid& eps_denoise, const Grid& eps_renoise,
                      const NoiseSchedule& s) {
    if (t < 1) {
        throw std::out_of_range("ddim_step requires t >= 1, got " + std::to_string(t));
    }
    z.require_same_shape(eps_renoise, "ddim_step");
    const auto [sab_prev, somb_prev] = snr_coefficients(s, t - 1);
    Grid out = tweedie_denoise(z, t, eps_denoise, s);
    out *= sab_prev;
    axpy(somb_prev, eps_renoise, out);
    return out;
}

struct GuidedEpsilon {
    Grid guided;
    Grid uncond;
};

// eps_uncond from the base model under the null condition; guided noise is
// the affine combination eps_uncond + scale * (eps_cond - eps_uncond). The
// unconditional term always comes from the non-specialized base model.
inline GuidedEpsilon guided_epsilon(const TemplateMixtureModel& base,
                                    const TemplateMixtureModel& cond_model, const Grid& z, int t,
                                    const ConditionSpec& cond, const GuidanceConfig& g) {
    if (cond.is_null()) {
        throw std::invalid_argument("guided_epsilon requires a non-null condition");
    }
    Grid uncond = base.epsilon(z, t, ConditionSpec::null_condition());
    Grid guided = uncond;
    Grid diff = cond_model.epsilon(z, t, cond);
    diff -= uncond;
    axpy(g.scale, diff, guided);
    return {std::move(guided), std::move(uncond)};
}

// Classifier-free-guided step: the guided noise drives both the denoising
// and the renoising term.
inline SamplerState cfg_step(const SamplerState& state, const TemplateMixtureModel& base,
                             const TemplateMixtureModel& cond_model, const ConditionSpec& cond,
                             const GuidanceConfig& g, const NoiseSchedule& s) {
    auto eps = guided_epsilon(base, cond_model, state.z, state.t, cond, g);
    return {ddim_step(state.z, state.t, eps.guided, eps.guided, s), state.t - 1, state.seed};
}

// Interpolating variant: guided noise in the denoising term, unconditional
// noise in the renoising term, which keeps the posterior mean on-manifold.
inline SamplerState cfgpp_step(const SamplerState& state, const TemplateMixtureModel& base,
                               const TemplateMixtureModel& cond_model, const ConditionSpec& cond,
                               const GuidanceConfig& g, const NoiseSchedule& s) {
    auto eps = guided_epsilon(base, cond_model, state.z, state.t, cond, g);
    return {ddim_step(state.z, state.t, eps.guided, eps.uncond, s), state.t - 1, state.seed};
}

} // namespace diffmix
