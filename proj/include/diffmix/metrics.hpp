#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "diffmix/config.hpp"
#include "diffmix/grid.hpp"
#include "diffmix/segmentation.hpp"

namespace diffmix {

// Desk-scale substitutes for embedding-based alignment scores:
//   coverage  - every target object is present in the sample
//   fidelity  - found objects carry the custom appearance, not the generic
//   blending  - object pixels leaking another concept's appearance
// Pixels are classified by the nearest scene signature (background, or a
// concept's generic/custom color), which stays meaningful for the partially
// interpolated amplitudes guidance produces.

struct ObjectOutcome {
    std::string tag;
    bool found = false;
    Rect box;
    bool custom_match = false; // nearest appearance among this concept's pixels
    double blending = 0.0;     // fraction of box pixels claimed by another concept
};

struct SampleMetrics {
    bool covered = false;
    std::vector<ObjectOutcome> objects;
};

struct MetricAggregate {
    int num_samples = 0;
    int num_covered = 0;
    int objects_expected = 0;
    int objects_found = 0;
    int custom_matches = 0;
    long long wrong_pixels = 0;
    long long region_pixels = 0;

    double coverage_rate() const {
        return num_samples == 0 ? 0.0 : double(num_covered) / num_samples;
    }
    double fidelity_score() const {
        return objects_found == 0 ? 0.0 : double(custom_matches) / objects_found;
    }
    double blending_score() const {
        return region_pixels == 0 ? 0.0 : double(wrong_pixels) / double(region_pixels);
    }
    double coverage_x_fidelity() const { return coverage_rate() * fidelity_score(); }

    void add(const SampleMetrics& m) {
        ++num_samples;
        if (m.covered) ++num_covered;
        for (const auto& obj : m.objects) {
            ++objects_expected;
            if (!obj.found) continue;
            ++objects_found;
            if (obj.custom_match) ++custom_matches;
            const long long area = obj.box.area();
            region_pixels += area;
            wrong_pixels += static_cast<long long>(std::llround(obj.blending * area));
        }
    }

    // A seed that produced no image (extraction failure) counts as an
    // uncovered sample with every object missing.
    void add_missing_sample(int expected_objects) {
        ++num_samples;
        objects_expected += expected_objects;
    }
};

namespace metricsdetail {

struct SignatureClass {
    int concept_index = -1; // -1 = background
    bool custom = false;
    std::vector<double> color;
};

inline std::vector<SignatureClass> build_classes(const Scene& scene) {
    std::vector<SignatureClass> classes;
    classes.push_back({-1, false, scene.segmentation.background_color});
    for (std::size_t i = 0; i < scene.concept_bindings.size(); ++i) {
        const std::string& tag = scene.concept_bindings[i].tag;
        const ObjectSignature* generic = scene.segmentation.find(tag);
        if (generic) classes.push_back({static_cast<int>(i), false, generic->color});
        const ConceptAppearance* custom = scene.appearance_for(tag);
        if (custom) classes.push_back({static_cast<int>(i), true, custom->custom_color});
    }
    return classes;
}

inline int nearest_class(const std::vector<SignatureClass>& classes, const Grid& img, int row,
                         int col) {
    int best = 0;
    double best_d2 = 0.0;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        double d2 = 0.0;
        for (int ch = 0; ch < img.channels(); ++ch) {
            const double d = img.at(row, col, ch) - classes[k].color[ch];
            d2 += d * d;
        }
        if (k == 0 || d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(k);
        }
    }
    return best;
}

} // namespace metricsdetail

inline SampleMetrics evaluate_sample(const Grid& img, const Scene& scene) {
    if (img.shape() != scene.grid) {
        throw ShapeError("sample is " + img.shape().str() + ", scene grid is " +
                         scene.grid.str());
    }
    const auto classes = metricsdetail::build_classes(scene);

    // Pixel-wise nearest-signature labels: which concept (if any) each pixel
    // belongs to, and whether it reads as the custom appearance.
    std::vector<int> owner(img.size() / img.channels());
    std::vector<int> label(owner.size());
    for (int r = 0; r < img.height(); ++r) {
        for (int c = 0; c < img.width(); ++c) {
            const int k = metricsdetail::nearest_class(classes, img, r, c);
            const std::size_t idx = static_cast<std::size_t>(r) * img.width() + c;
            owner[idx] = classes[static_cast<std::size_t>(k)].concept_index;
            label[idx] = k;
        }
    }

    SampleMetrics metrics;
    metrics.covered = true;
    for (std::size_t i = 0; i < scene.concept_bindings.size(); ++i) {
        ObjectOutcome outcome;
        outcome.tag = scene.concept_bindings[i].tag;

        PixelMask mine(img.height(), img.width());
        for (std::size_t idx = 0; idx < owner.size(); ++idx) {
            mine.on[idx] = owner[idx] == static_cast<int>(i);
        }
        const Detection det =
            detail::largest_component_box(mine, scene.segmentation.detector.min_area);
        if (det.area == 0) {
            metrics.covered = false;
            metrics.objects.push_back(std::move(outcome));
            continue;
        }
        outcome.found = true;
        outcome.box = det.box;

        int generic_votes = 0, custom_votes = 0, wrong = 0, total = 0;
        for (int r = det.box.row0; r < det.box.row1; ++r) {
            for (int c = det.box.col0; c < det.box.col1; ++c) {
                const std::size_t idx = static_cast<std::size_t>(r) * img.width() + c;
                ++total;
                if (owner[idx] == static_cast<int>(i)) {
                    const auto& cls = classes[static_cast<std::size_t>(label[idx])];
                    (cls.custom ? custom_votes : generic_votes) += 1;
                } else if (owner[idx] >= 0) {
                    ++wrong; // pixel reads as a different concept
                }
            }
        }
        outcome.custom_match = custom_votes > generic_votes;
        outcome.blending = total == 0 ? 0.0 : double(wrong) / total;
        metrics.objects.push_back(std::move(outcome));
    }
    return metrics;
}

} // namespace diffmix
