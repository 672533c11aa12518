#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "diffmix/errors.hpp"
#include "diffmix/grid.hpp"
#include "diffmix/schedule.hpp"

namespace diffmix {

enum class Appearance { generic, custom };

// One exemplar image in a mixture library. Tags name the objects the
// exemplar depicts; each tag carries the rectangle where that object's
// pixels live.
struct Template {
    std::string name;
    Grid image;
    double weight = 1.0;
    Appearance appearance = Appearance::generic;
    int concept_id = 0; // meaningful when appearance == custom
    std::map<std::string, Rect> objects;

    bool has_tag(const std::string& tag) const { return objects.count(tag) != 0; }
};

enum class ConditionKind { null_cond, single, multi };

// Which appearance a single-object condition asks for. `resolve` lets the
// queried model decide: a concept model prefers its own custom templates,
// the base model serves generic ones.
enum class AppearanceRequest { resolve, generic, custom };

struct ConditionSpec {
    ConditionKind kind = ConditionKind::null_cond;
    std::vector<std::string> tags;
    AppearanceRequest appearance = AppearanceRequest::resolve;
    std::string text; // free-form description for logs

    static ConditionSpec null_condition(std::string text = "") {
        ConditionSpec c;
        c.kind = ConditionKind::null_cond;
        c.text = std::move(text);
        return c;
    }
    static ConditionSpec single(std::string tag,
                                AppearanceRequest appearance = AppearanceRequest::resolve,
                                std::string text = "") {
        ConditionSpec c;
        c.kind = ConditionKind::single;
        c.tags = {std::move(tag)};
        c.appearance = appearance;
        c.text = std::move(text);
        return c;
    }
    static ConditionSpec multi(std::vector<std::string> tags, std::string text = "") {
        ConditionSpec c;
        c.kind = ConditionKind::multi;
        c.tags = std::move(tags);
        c.text = std::move(text);
        return c;
    }

    bool is_null() const { return kind == ConditionKind::null_cond; }

    std::string describe() const {
        if (!text.empty()) return text;
        switch (kind) {
            case ConditionKind::null_cond: return "<null>";
            case ConditionKind::single: return "single(" + tags.front() + ")";
            case ConditionKind::multi: {
                std::string out = "multi(";
                for (std::size_t i = 0; i < tags.size(); ++i) {
                    if (i) out += ",";
                    out += tags[i];
                }
                return out + ")";
            }
        }
        return "<invalid>";
    }
};

struct WeightedTemplate {
    const Template* tmpl = nullptr;
    double weight = 0.0; // normalized within the active set
};

// Analytic denoiser: a weighted mixture of Gaussian-smeared templates.
// Prior p(x0) = sum_k w_k N(x0; T_k, sigma_d^2 I); with the forward process
// z_t = sqrt(ab_t) x0 + sqrt(1-ab_t) n the posterior mean E[x0 | z_t] and
// the noise prediction eps(z_t) are available in closed form, so every
// sampling identity downstream is testable to machine precision.
//
// Model id 0 is the base (generic-appearance) model; ids >= 1 are concept
// models carrying custom(i) templates.
class TemplateMixtureModel {
public:
    TemplateMixtureModel() = default;
    TemplateMixtureModel(int model_id, double data_sigma, std::vector<Template> templates,
                         std::shared_ptr<const NoiseSchedule> schedule)
        : model_id_(model_id),
          data_sigma_(data_sigma),
          templates_(std::move(templates)),
          schedule_(std::move(schedule)) {
        validate();
    }

    int model_id() const { return model_id_; }
    double data_sigma() const { return data_sigma_; }
    const std::vector<Template>& templates() const { return templates_; }
    const NoiseSchedule& schedule() const { return *schedule_; }
    std::shared_ptr<const NoiseSchedule> schedule_ptr() const { return schedule_; }
    const GridShape& grid_shape() const { return templates_.front().image.shape(); }

    // Templates selected by a condition, weights renormalized to sum to 1.
    //   null         -> the whole library
    //   single(tag)  -> templates depicting the tag; a concept model prefers
    //                   its custom exemplars unless the request pins one
    //   multi(tags)  -> templates depicting every listed tag
    std::vector<WeightedTemplate> active_set(const ConditionSpec& cond) const {
        std::vector<const Template*> picked;
        switch (cond.kind) {
            case ConditionKind::null_cond:
                for (const auto& t : templates_) picked.push_back(&t);
                break;
            case ConditionKind::single: {
                const std::string& tag = cond.tags.front();
                std::vector<const Template*> generic, custom;
                for (const auto& t : templates_) {
                    if (!t.has_tag(tag)) continue;
                    if (t.appearance == Appearance::custom && t.concept_id == model_id_)
                        custom.push_back(&t);
                    else if (t.appearance == Appearance::generic)
                        generic.push_back(&t);
                }
                switch (cond.appearance) {
                    case AppearanceRequest::generic: picked = generic; break;
                    case AppearanceRequest::custom: picked = custom; break;
                    case AppearanceRequest::resolve:
                        picked = (model_id_ >= 1 && !custom.empty()) ? custom : generic;
                        break;
                }
                break;
            }
            case ConditionKind::multi:
                for (const auto& t : templates_) {
                    bool all = true;
                    for (const auto& tag : cond.tags) all = all && t.has_tag(tag);
                    if (all) picked.push_back(&t);
                }
                break;
        }
        if (picked.empty()) {
            throw ConditionError("condition '" + cond.describe() +
                                 "' selects no templates in model " +
                                 std::to_string(model_id_));
        }
        double total = 0.0;
        for (const Template* t : picked) total += t->weight;
        std::vector<WeightedTemplate> out;
        out.reserve(picked.size());
        for (const Template* t : picked) out.push_back({t, t->weight / total});
        return out;
    }

    // Posterior responsibilities gamma_k over the active set, computed in
    // log space and log-sum-exp normalized. Nonnegative, sum to 1.
    std::vector<double> responsibilities(const Grid& z, int t, const ConditionSpec& cond) const {
        return responsibilities_for(active_set(cond), z, t);
    }

    // E[x0 | z_t, cond] in closed form. With s = ab_t sigma_d^2 + (1 - ab_t):
    //   gamma_k ∝ w_k exp(-|z - sqrt(ab_t) T_k|^2 / (2s))
    //   m_k = T_k + (sqrt(ab_t) sigma_d^2 / s)(z - sqrt(ab_t) T_k)
    //   out = sum_k gamma_k m_k
    Grid posterior_mean(const Grid& z, int t, const ConditionSpec& cond) const {
        const auto active = active_set(cond);
        check_input(z, t);
        const auto gamma = responsibilities_for(active, z, t);
        const auto [sab, somb] = snr_coefficients(*schedule_, t);
        const double ab = sab * sab;
        const double s = ab * data_sigma_ * data_sigma_ + (1.0 - ab);

        Grid blended(z.shape());
        for (std::size_t k = 0; k < active.size(); ++k) {
            axpy(gamma[k], active[k].tmpl->image, blended);
        }
        // sum_k gamma_k m_k == blended + coef * (z - sqrt(ab) * blended)
        const double coef = sab * data_sigma_ * data_sigma_ / s;
        if (coef != 0.0) {
            Grid residual = z;
            axpy(-sab, blended, residual);
            axpy(coef, residual, blended);
        }
        return blended;
    }

    // Noise prediction consistent with posterior_mean through the denoising
    // identity: eps = (z - sqrt(ab_t) x0hat) / sqrt(1 - ab_t). Requires
    // t >= 1 so the denominator is positive.
    Grid epsilon(const Grid& z, int t, const ConditionSpec& cond) const {
        if (t < 1) {
            throw std::invalid_argument("epsilon undefined at t=" + std::to_string(t) +
                                        ": 1 - alpha_bar vanishes");
        }
        const auto [sab, somb] = snr_coefficients(*schedule_, t);
        Grid out = z;
        axpy(-sab, posterior_mean(z, t, cond), out);
        out *= 1.0 / somb;
        return out;
    }

private:
    std::vector<double> responsibilities_for(const std::vector<WeightedTemplate>& active,
                                             const Grid& z, int t) const {
        check_input(z, t);
        const auto [sab, somb] = snr_coefficients(*schedule_, t);
        const double ab = sab * sab;
        const double s = ab * data_sigma_ * data_sigma_ + (1.0 - ab);

        std::vector<double> logp(active.size());
        for (std::size_t k = 0; k < active.size(); ++k) {
            double d2 = 0.0;
            const Grid& img = active[k].tmpl->image;
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double d = z[i] - sab * img[i];
                d2 += d * d;
            }
            logp[k] = std::log(active[k].weight) - d2 / (2.0 * s);
        }
        const double m = *std::max_element(logp.begin(), logp.end());
        double denom = 0.0;
        for (double& lp : logp) {
            lp = std::exp(lp - m);
            denom += lp;
        }
        for (double& lp : logp) lp /= denom;
        return logp;
    }

    void check_input(const Grid& z, int t) const {
        schedule_->check_timestep(t);
        if (z.shape() != grid_shape()) {
            throw ShapeError("latent shape " + z.shape().str() +
                             " does not match model grid " + grid_shape().str());
        }
    }

    void validate() const {
        if (!schedule_) throw ConfigError("model " + std::to_string(model_id_) + ": no schedule");
        if (templates_.empty()) {
            throw ConfigError("model " + std::to_string(model_id_) + ": empty template library");
        }
        if (data_sigma_ < 0.0) {
            throw ConfigError("model " + std::to_string(model_id_) + ": data_sigma must be >= 0");
        }
        const GridShape shape = templates_.front().image.shape();
        for (const auto& t : templates_) {
            if (t.image.shape() != shape) {
                throw ConfigError("template '" + t.name + "': shape " + t.image.shape().str() +
                                  " differs from library grid " + shape.str());
            }
            if (!(t.weight > 0.0)) {
                throw ConfigError("template '" + t.name + "': weight must be positive");
            }
            if (model_id_ == 0 && t.appearance == Appearance::custom) {
                throw ConfigError("template '" + t.name +
                                  "': base model holds generic templates only");
            }
            std::vector<Rect> extents;
            for (const auto& [tag, rect] : t.objects) {
                if (!rect.inside(shape.height, shape.width)) {
                    throw ConfigError("template '" + t.name + "': extent " + rect.str() +
                                      " for tag '" + tag + "' leaves the grid");
                }
                for (const Rect& prev : extents) {
                    if (rect.intersects(prev)) {
                        throw ConfigError("template '" + t.name +
                                          "': object extents overlap at tag '" + tag + "'");
                    }
                }
                extents.push_back(rect);
            }
        }
    }

    int model_id_ = 0;
    double data_sigma_ = 0.0;
    std::vector<Template> templates_;
    std::shared_ptr<const NoiseSchedule> schedule_;
};

} // namespace diffmix
