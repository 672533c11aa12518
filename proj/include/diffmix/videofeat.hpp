#pragma once

#include <string>
#include <vector>

#include "diffmix/errors.hpp"
#include "diffmix/grid.hpp"

namespace diffmix {

// Per-frame feature grids of one network layer. All frames share a shape.
struct FrameFeatures {
    std::string layer_id;
    std::vector<Grid> frames;

    int num_frames() const { return static_cast<int>(frames.size()); }

    void validate() const {
        for (const Grid& f : frames) {
            if (f.shape() != frames.front().shape()) {
                throw ShapeError("layer '" + layer_id + "': frames must share one shape");
            }
        }
    }
};

// Blends the first frame's features into every later frame:
//   f_i <- eta * f_1 + (1 - eta) * f_i   for i = 2..F.
// Frame 1 is never touched. F < 2 is a no-op (the caller reports the
// warning). eta = 1 copies frame 1 everywhere; eta = 0 is the identity.
inline FrameFeatures inject(const FrameFeatures& features, double eta) {
    if (eta < 0.0 || eta > 1.0) {
        throw ConfigError("injection eta must be in [0,1], got " + std::to_string(eta));
    }
    features.validate();
    if (features.num_frames() < 2) return features;

    FrameFeatures out = features;
    const Grid& first = features.frames.front();
    for (std::size_t i = 1; i < out.frames.size(); ++i) {
        Grid blended = first;
        blended *= eta;
        axpy(1.0 - eta, features.frames[i], blended);
        out.frames[i] = std::move(blended);
    }
    return out;
}

// A layer-selector / eta pair. Selectors match a layer id exactly, or as a
// prefix when they end in '*'.
struct InjectionRule {
    std::string selector;
    double eta = 1.0;
};

inline bool selector_matches(const std::string& selector, const std::string& layer_id) {
    if (!selector.empty() && selector.back() == '*') {
        const std::string prefix = selector.substr(0, selector.size() - 1);
        return layer_id.compare(0, prefix.size(), prefix) == 0;
    }
    return selector == layer_id;
}

// Injection happens at the initial timestep only unless a wider window is
// configured explicitly.
struct InjectionPolicy {
    std::vector<InjectionRule> rules;
    bool restrict_to_initial = true;
    int window_min = 0; // active range when restrict_to_initial is false
    int window_max = 0;

    void validate() const {
        for (const auto& rule : rules) {
            if (rule.eta < 0.0 || rule.eta > 1.0) {
                throw ConfigError("rule '" + rule.selector + "': eta must be in [0,1]");
            }
        }
    }

    bool active_at(int t, int num_steps) const {
        if (restrict_to_initial) return t == num_steps;
        return t >= window_min && t <= window_max;
    }
};

struct PolicyApplication {
    std::vector<FrameFeatures> bundle;
    std::vector<std::string> warnings;
};

// Applies the policy to a feature bundle at timestep t of a num_steps
// schedule. Outside the active window this is the identity. Rules that
// match no layer, and layers with fewer than two frames, produce warnings
// rather than failures.
inline PolicyApplication apply_policy(const std::vector<FrameFeatures>& bundle,
                                      const InjectionPolicy& policy, int t, int num_steps) {
    policy.validate();
    PolicyApplication result{bundle, {}};
    if (!policy.active_at(t, num_steps)) return result;

    for (const auto& rule : policy.rules) {
        bool matched = false;
        for (auto& layer : result.bundle) {
            if (!selector_matches(rule.selector, layer.layer_id)) continue;
            matched = true;
            if (layer.num_frames() < 2) {
                result.warnings.push_back("layer '" + layer.layer_id +
                                          "' has fewer than two frames; injection skipped");
                continue;
            }
            layer = inject(layer, rule.eta);
        }
        if (!matched) {
            result.warnings.push_back("rule '" + rule.selector + "' matches no layer");
        }
    }
    return result;
}

} // namespace diffmix
