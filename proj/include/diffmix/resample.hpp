#pragma once

#include <string>
#include <vector>

#include "diffmix/oracle.hpp"
#include "diffmix/rng.hpp"
#include "diffmix/sampler.hpp"

namespace diffmix {

// How the refinement loop returns from T-1 to T. Deterministic inversion
// reuses the conditioned noise prediction at T-1; fresh_noise renoises with
// a new Gaussian draw instead.
enum class ForwardMode { ddim_inversion, fresh_noise };

struct ResampleConfig {
    int rounds = 10; // P; 0 disables resampling
    GuidanceConfig guidance{GuidanceMode::cfg_pp, 0.6};
    ConditionSpec multi_condition;
    std::vector<ConditionSpec> single_conditions; // c_1..c_N
    ForwardMode forward_mode = ForwardMode::ddim_inversion;

    void validate() const {
        if (rounds < 0) throw ConfigError("resample.rounds must be >= 0");
        if (guidance.mode != GuidanceMode::cfg_pp) {
            throw ConfigError("resample.guidance must be cfg_pp");
        }
        guidance.validate();
        if (single_conditions.empty()) {
            throw ConfigError("resample needs at least one single-object condition");
        }
    }
};

// Adjusted denoised estimate at the initial timestep T:
//   N * x0hat[c_multi] - sum_i x0hat[c_i]
// with every estimate a guided posterior mean from the base model. The
// shared content between the multi-object estimate and each single-object
// estimate cancels, leaving the object-enhancing difference directions.
// The result is an extrapolation and may leave the data range; it is not
// clipped.
inline Grid adjusted_denoised(const Grid& z_top, const TemplateMixtureModel& base,
                              const ResampleConfig& cfg) {
    const NoiseSchedule& s = base.schedule();
    const int t_top = s.num_steps;
    const double n = static_cast<double>(cfg.single_conditions.size());

    auto mul = guided_epsilon(base, base, z_top, t_top, cfg.multi_condition, cfg.guidance);
    Grid adj = tweedie_denoise(z_top, t_top, mul.guided, s);
    adj *= n;
    for (const ConditionSpec& cond : cfg.single_conditions) {
        auto single = guided_epsilon(base, base, z_top, t_top, cond, cfg.guidance);
        adj -= tweedie_denoise(z_top, t_top, single.guided, s);
    }
    return adj;
}

// P rounds of initial-latent refinement. Each round: (a) adjusted denoised
// estimate at T, (b) step to T-1 with the unconditional renoising term,
// (c) return to T, by default deterministic inversion with the multi-object
// guided noise recomputed at T-1:
//   z_T <- sqrt(ab_T) x0hat(z_{T-1}) + sqrt(1-ab_T) eps_guided(z_{T-1}).
// P = 0 returns the input unchanged. The default mode draws no fresh noise,
// so a round is a deterministic function of z_T.
inline Grid resample_loop(const Grid& z_top, const TemplateMixtureModel& base,
                          const ResampleConfig& cfg, SeededRng* rng = nullptr) {
    cfg.validate();
    const NoiseSchedule& s = base.schedule();
    const int t_top = s.num_steps;
    if (cfg.forward_mode == ForwardMode::fresh_noise && rng == nullptr) {
        throw ConfigError("resample.forward_mode fresh_noise needs a random stream");
    }

    Grid z = z_top;
    for (int round = 0; round < cfg.rounds; ++round) {
        Grid adj = adjusted_denoised(z, base, cfg);

        auto eps_uncond = base.epsilon(z, t_top, ConditionSpec::null_condition());
        const auto [sab_prev, somb_prev] = snr_coefficients(s, t_top - 1);
        Grid z_prev = adj;
        z_prev *= sab_prev;
        axpy(somb_prev, eps_uncond, z_prev);

        const auto [sab_top, somb_top] = snr_coefficients(s, t_top);
        auto fwd = guided_epsilon(base, base, z_prev, t_top - 1, cfg.multi_condition,
                                  cfg.guidance);
        Grid x0 = tweedie_denoise(z_prev, t_top - 1, fwd.guided, s);
        z = x0;
        z *= sab_top;
        if (cfg.forward_mode == ForwardMode::ddim_inversion) {
            axpy(somb_top, fwd.guided, z);
        } else {
            axpy(somb_top, rng->normal_grid(z.shape()), z);
        }
    }
    return z;
}

} // namespace diffmix
