#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "diffmix/config.hpp"
#include "diffmix/oracle.hpp"
#include "diffmix/rng.hpp"
#include "diffmix/sampler.hpp"

namespace diffmix {

// Self-diagnostics for the configured mixture libraries: the closed-form
// denoisers are re-derived through independent numerical routes and checked
// against the production code paths.

struct OracleCheckItem {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct OracleCheckReport {
    std::vector<OracleCheckItem> items;
    std::vector<std::string> warnings;

    bool all_pass() const {
        for (const auto& item : items)
            if (!item.pass) return false;
        return true;
    }
};

namespace oracledetail {

// Log marginal density of z_t under a mixture library, written as a direct
// scalar loop so it shares no code with the model's posterior path.
inline double log_marginal(const std::vector<WeightedTemplate>& active, const Grid& z, double sab,
                           double s) {
    double best = -1e300;
    std::vector<double> exponents;
    for (const auto& wt : active) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double d = z[i] - sab * wt.tmpl->image[i];
            d2 += d * d;
        }
        const double e = std::log(wt.weight) - d2 / (2.0 * s);
        exponents.push_back(e);
        best = std::max(best, e);
    }
    double acc = 0.0;
    for (double e : exponents) acc += std::exp(e - best);
    return best + std::log(acc);
}

// Average-pool a model down to at most 8x8x1 so importance sampling keeps a
// healthy effective sample size.
inline TemplateMixtureModel pooled_model(const TemplateMixtureModel& model) {
    const GridShape in = model.grid_shape();
    const int block_h = (in.height + 7) / 8;
    const int block_w = (in.width + 7) / 8;
    const GridShape out{(in.height + block_h - 1) / block_h, (in.width + block_w - 1) / block_w,
                        1};
    std::vector<Template> pooled;
    for (const Template& t : model.templates()) {
        Template p;
        p.name = t.name + "<pooled>";
        p.weight = t.weight;
        p.appearance = t.appearance;
        p.concept_id = t.concept_id;
        p.image = Grid(out);
        for (int r = 0; r < out.height; ++r) {
            for (int c = 0; c < out.width; ++c) {
                double acc = 0.0;
                int n = 0;
                for (int rr = r * block_h; rr < std::min(in.height, (r + 1) * block_h); ++rr) {
                    for (int cc = c * block_w; cc < std::min(in.width, (c + 1) * block_w); ++cc) {
                        for (int ch = 0; ch < in.channels; ++ch) {
                            acc += t.image.at(rr, cc, ch);
                            ++n;
                        }
                    }
                }
                p.image.at(r, c, 0) = acc / n;
            }
        }
        pooled.push_back(std::move(p));
    }
    return TemplateMixtureModel(model.model_id(), model.data_sigma(), std::move(pooled),
                                model.schedule_ptr());
}

} // namespace oracledetail

// Responsibilities sum to one on random latents.
inline OracleCheckItem check_responsibilities(const TemplateMixtureModel& model, int t,
                                              SeededRng& rng) {
    auto gamma = model.responsibilities(rng.normal_grid(model.grid_shape()), t,
                                        ConditionSpec::null_condition());
    double sum = 0.0, min_g = 1.0;
    for (double g : gamma) {
        sum += g;
        min_g = std::min(min_g, g);
    }
    const double err = std::abs(sum - 1.0);
    std::ostringstream detail;
    detail << "model " << model.model_id() << " t=" << t << " |sum-1|=" << err;
    return {"responsibilities", err <= 1e-12 && min_g >= 0.0, detail.str()};
}

// epsilon and posterior_mean must satisfy the denoising identity exactly.
inline OracleCheckItem check_round_trip(const TemplateMixtureModel& model, int t,
                                        SeededRng& rng) {
    const Grid z = rng.normal_grid(model.grid_shape());
    const auto cond = ConditionSpec::null_condition();
    const Grid xhat = model.posterior_mean(z, t, cond);
    const Grid via_eps = tweedie_denoise(z, t, model.epsilon(z, t, cond), model.schedule());
    const double err = linf_distance(xhat, via_eps);
    std::ostringstream detail;
    detail << "model " << model.model_id() << " t=" << t << " linf=" << err;
    return {"round_trip", err <= 1e-12, detail.str()};
}

// Central finite differences of the independently coded log density must
// reproduce the model's noise prediction through
// eps = -sqrt(1-ab) * grad log p.
inline OracleCheckItem check_score_fd(const TemplateMixtureModel& model, int t, SeededRng& rng,
                                      double step = 1e-5, double tol = 1e-4) {
    const auto cond = ConditionSpec::null_condition();
    const auto active = model.active_set(cond);
    const auto [sab, somb] = snr_coefficients(model.schedule(), t);
    const double s = sab * sab * model.data_sigma() * model.data_sigma() + (1.0 - sab * sab);

    // Draw z from the forward process so distances are typical.
    const Template& pick = *active.front().tmpl;
    Grid z = rng.normal_grid(model.grid_shape());
    z *= somb;
    axpy(sab, pick.image, z);

    const Grid eps = model.epsilon(z, t, cond);
    double worst = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        Grid zp = z, zm = z;
        zp[i] += step;
        zm[i] -= step;
        const double grad = (oracledetail::log_marginal(active, zp, sab, s) -
                             oracledetail::log_marginal(active, zm, sab, s)) /
                            (2.0 * step);
        worst = std::max(worst, std::abs(-somb * grad - eps[i]));
    }
    std::ostringstream detail;
    detail << "model " << model.model_id() << " t=" << t << " max|fd - eps|=" << worst;
    return {"score_finite_difference", worst <= tol, detail.str()};
}

// Importance-sampling estimate of E[x0 | z_t] on a pooled copy of the
// library, compared element-wise within confidence bands.
inline OracleCheckItem check_posterior_mc(const TemplateMixtureModel& model, int t,
                                          SeededRng& rng, int draws = 200000,
                                          double sigma_bound = 4.0) {
    const TemplateMixtureModel pooled = oracledetail::pooled_model(model);
    const auto cond = ConditionSpec::null_condition();
    const auto active = pooled.active_set(cond);
    const auto [sab, somb] = snr_coefficients(pooled.schedule(), t);
    const double sigma_d = pooled.data_sigma();

    Grid z = rng.normal_grid(pooled.grid_shape());
    z *= somb;
    axpy(sab, active.front().tmpl->image, z);
    const Grid closed = pooled.posterior_mean(z, t, cond);

    // Sample x0 from the prior, weight by the forward likelihood.
    const std::size_t n = z.size();
    std::vector<double> mean(n, 0.0), second(n, 0.0);
    double weight_sum = 0.0, weight_sq_sum = 0.0;
    std::vector<double> cum;
    double acc = 0.0;
    for (const auto& wt : active) {
        acc += wt.weight;
        cum.push_back(acc);
    }
    Grid x0(pooled.grid_shape());
    for (int d = 0; d < draws; ++d) {
        const double u = rng.uniform() * acc;
        std::size_t k = 0;
        while (k + 1 < cum.size() && u > cum[k]) ++k;
        const Grid& base_img = active[k].tmpl->image;
        double log_w = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            x0[i] = base_img[i] + sigma_d * rng.normal();
            const double resid = z[i] - sab * x0[i];
            log_w += -resid * resid / (2.0 * somb * somb);
        }
        const double w = std::exp(log_w);
        weight_sum += w;
        weight_sq_sum += w * w;
        for (std::size_t i = 0; i < n; ++i) {
            mean[i] += w * x0[i];
            second[i] += w * x0[i] * x0[i];
        }
    }
    if (weight_sum <= 0.0) {
        return {"posterior_monte_carlo", false, "all importance weights underflowed"};
    }
    const double ess = weight_sum * weight_sum / weight_sq_sum;
    double worst_sigmas = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double mu = mean[i] / weight_sum;
        const double var = std::max(0.0, second[i] / weight_sum - mu * mu);
        const double se = std::sqrt(var / ess) + 1e-9;
        worst_sigmas = std::max(worst_sigmas, std::abs(mu - closed[i]) / se);
    }
    std::ostringstream detail;
    detail << "model " << model.model_id() << " t=" << t << " ess=" << std::lround(ess)
           << " worst |closed-mc|/se=" << worst_sigmas;
    return {"posterior_monte_carlo", worst_sigmas <= sigma_bound, detail.str()};
}

// Degenerate K=1, sigma_d=0 libraries must return the template exactly.
inline OracleCheckItem check_exact_branch(const TemplateMixtureModel& model, int t,
                                          SeededRng& rng) {
    const Grid z = rng.normal_grid(model.grid_shape());
    const Grid xhat = model.posterior_mean(z, t, ConditionSpec::null_condition());
    const double err = linf_distance(xhat, model.templates().front().image);
    std::ostringstream detail;
    detail << "model " << model.model_id() << " t=" << t << " linf=" << err;
    return {"single_template_exact", err <= 1e-9, detail.str()};
}

inline OracleCheckReport run_oracle_checks(const Scene& scene) {
    OracleCheckReport report;
    report.warnings = scene.warnings;
    SeededRng rng(0x0c0ffee5eedull);
    const int t_mid = std::max(1, scene.schedule->num_steps / 2);
    const int t_hi = scene.schedule->num_steps;

    for (const auto& [id, model] : scene.models) {
        for (int t : {1, t_mid, t_hi}) {
            report.items.push_back(check_responsibilities(*model, t, rng));
            report.items.push_back(check_round_trip(*model, t, rng));
        }
        report.items.push_back(check_score_fd(*model, t_mid, rng));
        report.items.push_back(check_posterior_mc(*model, t_mid, rng));
        if (model->templates().size() == 1 && model->data_sigma() == 0.0) {
            report.items.push_back(check_exact_branch(*model, t_mid, rng));
        }
    }
    return report;
}

} // namespace diffmix
