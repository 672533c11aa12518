#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diffmix/grid.hpp"
#include "diffmix/oracle.hpp"
#include "diffmix/sampler.hpp"

namespace diffmix {

// Binary per-pixel mask over an H x W grid (channels are masked together).
struct PixelMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> on;

    PixelMask() = default;
    PixelMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), on(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int row, int col) { return on[static_cast<std::size_t>(row) * width + col]; }
    std::uint8_t at(int row, int col) const {
        return on[static_cast<std::size_t>(row) * width + col];
    }
    int count() const {
        int c = 0;
        for (auto v : on) c += v ? 1 : 0;
        return c;
    }
    bool operator==(const PixelMask&) const = default;
};

inline PixelMask rasterize(const Rect& box, int height, int width) {
    PixelMask m(height, width);
    for (int r = box.row0; r < box.row1; ++r)
        for (int c = box.col0; c < box.col1; ++c) m.at(r, c) = 1;
    return m;
}

struct ConceptRegion {
    int concept_id = 0;
    Rect box;       // detector box before exclusion
    PixelMask mask; // pixels owned after exclusion; may be non-rectangular
};

// Per-concept regions plus the background complement. A successful
// extraction partitions the grid: every pixel belongs to exactly one region.
struct RegionMaskSet {
    int height = 0;
    int width = 0;
    std::vector<ConceptRegion> regions;
    PixelMask background;

    bool partitions() const {
        for (int r = 0; r < height; ++r) {
            for (int c = 0; c < width; ++c) {
                int owners = background.at(r, c) ? 1 : 0;
                for (const auto& region : regions) owners += region.mask.at(r, c) ? 1 : 0;
                if (owners != 1) return false;
            }
        }
        return true;
    }
};

struct ObjectSignature {
    std::string tag;
    std::vector<double> color; // one entry per channel
};

struct DetectorParams {
    double tau = 0.15; // color-distance threshold in [0,1] space
    int min_area = 4;  // components below this are ignored
};

struct Detection {
    std::string tag;
    Rect box;
    int area = 0;
};

struct DetectionReport {
    std::vector<Detection> found;
    std::vector<std::string> absent;
};

namespace detail {

// 4-connected component labelling; returns (labels, component count).
// Label 0 is off-mask.
inline std::pair<std::vector<int>, int> label_components(const PixelMask& mask) {
    std::vector<int> labels(mask.on.size(), 0);
    int next = 0;
    std::vector<std::size_t> stack;
    for (int r = 0; r < mask.height; ++r) {
        for (int c = 0; c < mask.width; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * mask.width + c;
            if (!mask.on[idx] || labels[idx]) continue;
            labels[idx] = ++next;
            stack.assign(1, idx);
            while (!stack.empty()) {
                const std::size_t cur = stack.back();
                stack.pop_back();
                const int cr = static_cast<int>(cur) / mask.width;
                const int cc = static_cast<int>(cur) % mask.width;
                const int dr[] = {-1, 1, 0, 0};
                const int dc[] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int nr = cr + dr[k], nc = cc + dc[k];
                    if (nr < 0 || nr >= mask.height || nc < 0 || nc >= mask.width) continue;
                    const std::size_t nidx = static_cast<std::size_t>(nr) * mask.width + nc;
                    if (mask.on[nidx] && !labels[nidx]) {
                        labels[nidx] = next;
                        stack.push_back(nidx);
                    }
                }
            }
        }
    }
    return {std::move(labels), next};
}

// Tight bounding box of the largest component with area >= min_area, or
// nullopt-equivalent (area 0) when none qualifies.
inline Detection largest_component_box(const PixelMask& mask, int min_area) {
    auto [labels, count] = label_components(mask);
    Detection best;
    for (int label = 1; label <= count; ++label) {
        int area = 0;
        Rect box{mask.height, mask.width, 0, 0};
        for (int r = 0; r < mask.height; ++r) {
            for (int c = 0; c < mask.width; ++c) {
                if (labels[static_cast<std::size_t>(r) * mask.width + c] != label) continue;
                ++area;
                box.row0 = std::min(box.row0, r);
                box.col0 = std::min(box.col0, c);
                box.row1 = std::max(box.row1, r + 1);
                box.col1 = std::max(box.col1, c + 1);
            }
        }
        if (area >= min_area && area > best.area) best = Detection{"", box, area};
    }
    return best;
}

inline double color_distance(const Grid& img, int row, int col, const std::vector<double>& color) {
    double d2 = 0.0;
    for (int ch = 0; ch < img.channels(); ++ch) {
        const double d = img.at(row, col, ch) - color[ch];
        d2 += d * d;
    }
    return std::sqrt(d2);
}

} // namespace detail

// Color-signature blob detector: per tag, threshold on the Euclidean color
// distance to the signature, keep the largest connected component, report
// its tight bounding box. Tags with no component of at least min_area come
// back absent. Stands in for a text-guided segmentation network; concepts
// in this engine are color-coded by construction.
inline DetectionReport detect_objects(const Grid& img, const std::vector<ObjectSignature>& sigs,
                                      const DetectorParams& params = {}) {
    DetectionReport report;
    for (const auto& sig : sigs) {
        if (static_cast<int>(sig.color.size()) != img.channels()) {
            throw ShapeError("signature '" + sig.tag + "' has " +
                             std::to_string(sig.color.size()) + " channels, image has " +
                             std::to_string(img.channels()));
        }
        PixelMask hits(img.height(), img.width());
        for (int r = 0; r < img.height(); ++r)
            for (int c = 0; c < img.width(); ++c)
                hits.at(r, c) = detail::color_distance(img, r, c, sig.color) < params.tau;
        Detection det = detail::largest_component_box(hits, params.min_area);
        if (det.area > 0) {
            det.tag = sig.tag;
            report.found.push_back(det);
        } else {
            report.absent.push_back(sig.tag);
        }
    }
    return report;
}

// Extraction outcome: either a valid partition or a failure reason. Failed
// extractions abort the sample, they are not an error condition of the
// batch.
struct MaskExtraction {
    bool ok = false;
    RegionMaskSet masks;
    std::string failure;

    static MaskExtraction success(RegionMaskSet m) { return {true, std::move(m), ""}; }
    static MaskExtraction fail(std::string why) { return {false, {}, std::move(why)}; }
};

// Turns detector boxes into a partition. Boxes are taken in priority order
// (declaration order); a later region loses any pixel already claimed, so
// earlier concepts never shrink. A region fully consumed by exclusion is a
// complete-overlap failure. Background is the complement of the union.
inline MaskExtraction resolve_overlaps(const std::vector<std::pair<int, Rect>>& boxes, int height,
                                       int width) {
    RegionMaskSet set;
    set.height = height;
    set.width = width;
    PixelMask claimed(height, width);
    for (const auto& [concept_id, box] : boxes) {
        if (!box.inside(height, width)) {
            return MaskExtraction::fail("box " + box.str() + " for concept " +
                                        std::to_string(concept_id) + " leaves the grid");
        }
        ConceptRegion region{concept_id, box, PixelMask(height, width)};
        int kept = 0;
        for (int r = box.row0; r < box.row1; ++r) {
            for (int c = box.col0; c < box.col1; ++c) {
                if (claimed.at(r, c)) continue;
                region.mask.at(r, c) = 1;
                claimed.at(r, c) = 1;
                ++kept;
            }
        }
        if (kept == 0) {
            return MaskExtraction::fail("complete overlap: concept " +
                                        std::to_string(concept_id) + " box " + box.str() +
                                        " fully claimed by earlier regions");
        }
        set.regions.push_back(std::move(region));
    }
    set.background = PixelMask(height, width);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) set.background.at(r, c) = claimed.at(r, c) ? 0 : 1;
    return MaskExtraction::success(std::move(set));
}

// One-step denoised view of the trajectory at timestep t, optionally after
// a few extra guided reverse steps on a side trajectory (the main trajectory
// is never advanced here). The latent-to-image decoder is the identity at
// this scale.
inline Grid intermediate_image(const Grid& z, int t, const TemplateMixtureModel& model,
                               const ConditionSpec& cond, const GuidanceConfig& g,
                               const NoiseSchedule& s, int extra_steps = 0) {
    SamplerState side{z, t, 0};
    for (int k = 0; k < extra_steps && side.t > 1; ++k) {
        side = cfgpp_step(side, model, model, cond, g, s);
    }
    auto eps = guided_epsilon(model, model, side.z, side.t, cond, g);
    return tweedie_denoise(side.z, side.t, eps.guided, s);
}

} // namespace diffmix
