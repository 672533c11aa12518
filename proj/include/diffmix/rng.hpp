#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "diffmix/grid.hpp"

namespace diffmix {

// Deterministic random stream with a recorded seed. Gaussian draws use
// explicit Box-Muller over raw engine output so sequences do not depend on
// the standard library's distribution internals.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0,1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Grid normal_grid(const GridShape& shape) {
        Grid g(shape);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = normal();
        return g;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace diffmix
