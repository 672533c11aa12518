#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "diffmix/errors.hpp"

namespace diffmix {

enum class ScheduleKind { linear, cosine };

inline std::string to_string(ScheduleKind kind) {
    return kind == ScheduleKind::linear ? "linear" : "cosine";
}

// Variance schedule over reverse steps t = 1..T. Index 0 is the clean-data
// convention: beta_0 = 0, alpha_0 = 1, alpha_bar_0 = 1. All tables have
// T + 1 entries so a timestep indexes directly.
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::linear;
    int num_steps = 0; // T
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    double alpha_bar(int t) const {
        check_timestep(t);
        return alpha_bars[static_cast<std::size_t>(t)];
    }
    double beta(int t) const {
        check_timestep(t);
        return betas[static_cast<std::size_t>(t)];
    }

    void check_timestep(int t) const {
        if (t < 0 || t > num_steps) {
            throw std::out_of_range("timestep " + std::to_string(t) +
                                    " outside [0," + std::to_string(num_steps) + "]");
        }
    }
};

// (sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)); squares sum to one. t = 0 is
// the clean-data boundary and yields (1, 0).
inline std::pair<double, double> snr_coefficients(const NoiseSchedule& s, int t) {
    const double ab = s.alpha_bar(t);
    return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

inline NoiseSchedule build_schedule(ScheduleKind kind, int num_steps, double beta_min,
                                    double beta_max) {
    if (num_steps < 2) {
        throw ConfigError("schedule.num_steps must be >= 2, got " + std::to_string(num_steps));
    }
    if (!(beta_min > 0.0)) {
        throw ConfigError("schedule.beta_min must be > 0, got " + std::to_string(beta_min));
    }
    if (!(beta_max >= beta_min)) {
        throw ConfigError("schedule.beta_max must be >= beta_min, got " +
                          std::to_string(beta_max));
    }
    if (!(beta_max < 1.0)) {
        throw ConfigError("schedule.beta_max must be < 1, got " + std::to_string(beta_max));
    }

    NoiseSchedule s;
    s.kind = kind;
    s.num_steps = num_steps;
    s.betas.assign(static_cast<std::size_t>(num_steps) + 1, 0.0);
    s.alphas.assign(static_cast<std::size_t>(num_steps) + 1, 1.0);
    s.alpha_bars.assign(static_cast<std::size_t>(num_steps) + 1, 1.0);

    for (int t = 1; t <= num_steps; ++t) {
        double beta = 0.0;
        if (kind == ScheduleKind::linear) {
            beta = num_steps == 1
                       ? beta_min
                       : beta_min + (beta_max - beta_min) * (t - 1) / double(num_steps - 1);
        } else {
            // Squared-cosine alpha_bar profile; betas are the step ratios.
            auto f = [num_steps](double u) {
                const double x = (u / num_steps + 0.008) / 1.008 * std::numbers::pi / 2.0;
                return std::cos(x) * std::cos(x);
            };
            beta = std::min(1.0 - f(double(t)) / f(double(t - 1)), 0.999);
        }
        s.betas[static_cast<std::size_t>(t)] = beta;
        s.alphas[static_cast<std::size_t>(t)] = 1.0 - beta;
        s.alpha_bars[static_cast<std::size_t>(t)] =
            s.alpha_bars[static_cast<std::size_t>(t - 1)] * (1.0 - beta);
    }
    return s;
}

} // namespace diffmix
