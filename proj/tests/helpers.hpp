#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "diffmix/grid.hpp"
#include "diffmix/oracle.hpp"
#include "diffmix/rng.hpp"
#include "diffmix/schedule.hpp"

namespace testutil {

using namespace diffmix;

inline std::shared_ptr<const NoiseSchedule> default_schedule(int num_steps = 50) {
    return std::make_shared<NoiseSchedule>(
        build_schedule(ScheduleKind::linear, num_steps, 1e-4, 0.02));
}

inline Grid solid(int h, int w, int c, double value) { return Grid(h, w, c, value); }

inline void paint(Grid& img, const Rect& box, double value) {
    for (int r = box.row0; r < box.row1; ++r)
        for (int c = box.col0; c < box.col1; ++c)
            for (int ch = 0; ch < img.channels(); ++ch) img.at(r, c, ch) = value;
}

inline Template make_template(std::string name, Grid img, double weight,
                              std::map<std::string, Rect> objects = {},
                              Appearance appearance = Appearance::generic, int concept_id = 0) {
    Template t;
    t.name = std::move(name);
    t.image = std::move(img);
    t.weight = weight;
    t.objects = std::move(objects);
    t.appearance = appearance;
    t.concept_id = concept_id;
    return t;
}

// Two well-separated templates on an 8x8x1 grid: left-half block vs
// right-half block. Far enough apart that responsibilities collapse.
inline TemplateMixtureModel far_pair_model(double data_sigma,
                                           std::shared_ptr<const NoiseSchedule> sched) {
    Grid a = solid(8, 8, 1, 0.0);
    paint(a, {0, 0, 8, 4}, 1.0);
    Grid b = solid(8, 8, 1, 0.0);
    paint(b, {0, 4, 8, 8}, 1.0);
    std::vector<Template> lib;
    lib.push_back(make_template("left", a, 0.5, {{"a", Rect{0, 0, 8, 4}}}));
    lib.push_back(make_template("right", b, 0.5, {{"b", Rect{0, 4, 8, 8}}}));
    return TemplateMixtureModel(0, data_sigma, std::move(lib), std::move(sched));
}

// Three-component library with moderate separation, for the statistical
// oracle checks.
inline TemplateMixtureModel k3_model(double data_sigma,
                                     std::shared_ptr<const NoiseSchedule> sched) {
    Grid a = solid(8, 8, 1, 0.1);
    paint(a, {1, 1, 4, 4}, 0.8);
    Grid b = solid(8, 8, 1, 0.2);
    paint(b, {4, 4, 7, 7}, 0.9);
    Grid c = solid(8, 8, 1, 0.15);
    paint(c, {2, 4, 5, 7}, 0.6);
    std::vector<Template> lib;
    lib.push_back(make_template("a", a, 0.5));
    lib.push_back(make_template("b", b, 0.3));
    lib.push_back(make_template("c", c, 0.2));
    return TemplateMixtureModel(0, data_sigma, std::move(lib), std::move(sched));
}

// Scalar log marginal density of z_t, written independently of the model
// code, for finite-difference score checks.
inline double log_marginal_density(const std::vector<WeightedTemplate>& active, const Grid& z,
                                   double sqrt_alpha_bar, double s) {
    double best = -1e300;
    std::vector<double> exponents;
    for (const auto& wt : active) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double d = z[i] - sqrt_alpha_bar * wt.tmpl->image[i];
            d2 += d * d;
        }
        exponents.push_back(std::log(wt.weight) - d2 / (2.0 * s));
        best = std::max(best, exponents.back());
    }
    double acc = 0.0;
    for (double e : exponents) acc += std::exp(e - best);
    return best + std::log(acc);
}

} // namespace testutil
