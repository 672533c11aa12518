#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "diffmix/errors.hpp"

namespace diffmix {

struct GridShape {
    int height = 0;
    int width = 0;
    int channels = 0;

    bool operator==(const GridShape&) const = default;

    std::size_t element_count() const {
        return static_cast<std::size_t>(height) * width * channels;
    }
    std::string str() const {
        return std::to_string(height) + "x" + std::to_string(width) + "x" +
               std::to_string(channels);
    }
};

// Dense H x W x C grid of doubles, row-major with channels innermost.
// Clean data lives in [0,1]; latents are unbounded.
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, int channels, double fill = 0.0)
        : shape_{height, width, channels}, values_(shape_.element_count(), fill) {}
    explicit Grid(GridShape shape, double fill = 0.0)
        : shape_(shape), values_(shape.element_count(), fill) {}

    const GridShape& shape() const { return shape_; }
    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    int channels() const { return shape_.channels; }
    std::size_t size() const { return values_.size(); }

    double& at(int row, int col, int ch) {
        return values_[(static_cast<std::size_t>(row) * shape_.width + col) * shape_.channels + ch];
    }
    double at(int row, int col, int ch) const {
        return values_[(static_cast<std::size_t>(row) * shape_.width + col) * shape_.channels + ch];
    }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    Grid& operator+=(const Grid& rhs) {
        require_same_shape(rhs, "+=");
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += rhs.values_[i];
        return *this;
    }
    Grid& operator-=(const Grid& rhs) {
        require_same_shape(rhs, "-=");
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= rhs.values_[i];
        return *this;
    }
    Grid& operator*=(double s) {
        for (double& v : values_) v *= s;
        return *this;
    }

    friend Grid operator+(Grid lhs, const Grid& rhs) { return lhs += rhs; }
    friend Grid operator-(Grid lhs, const Grid& rhs) { return lhs -= rhs; }
    friend Grid operator*(double s, Grid g) { return g *= s; }
    friend Grid operator*(Grid g, double s) { return g *= s; }

    bool operator==(const Grid&) const = default;

    void require_same_shape(const Grid& other, const std::string& op) const {
        if (shape_ != other.shape_) {
            throw ShapeError("grid shape mismatch in '" + op + "': " + shape_.str() +
                             " vs " + other.shape_.str());
        }
    }

private:
    GridShape shape_;
    std::vector<double> values_;
};

// y += a * x
inline void axpy(double a, const Grid& x, Grid& y) {
    y.require_same_shape(x, "axpy");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline double squared_distance(const Grid& a, const Grid& b) {
    a.require_same_shape(b, "squared_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

inline double l2_norm(const Grid& g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * g[i];
    return std::sqrt(acc);
}

inline double l2_distance(const Grid& a, const Grid& b) {
    return std::sqrt(squared_distance(a, b));
}

inline double linf_distance(const Grid& a, const Grid& b) {
    a.require_same_shape(b, "linf_distance");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Axis-aligned rectangle, half-open: rows [row0,row1), cols [col0,col1).
struct Rect {
    int row0 = 0;
    int col0 = 0;
    int row1 = 0;
    int col1 = 0;

    bool operator==(const Rect&) const = default;

    int area() const { return std::max(0, row1 - row0) * std::max(0, col1 - col0); }
    bool contains(int row, int col) const {
        return row >= row0 && row < row1 && col >= col0 && col < col1;
    }
    bool inside(int height, int width) const {
        return row0 >= 0 && col0 >= 0 && row1 <= height && col1 <= width &&
               row0 < row1 && col0 < col1;
    }
    bool intersects(const Rect& o) const {
        return row0 < o.row1 && o.row0 < row1 && col0 < o.col1 && o.col0 < col1;
    }
    std::string str() const {
        return "{" + std::to_string(row0) + "," + std::to_string(col0) + "," +
               std::to_string(row1) + "," + std::to_string(col1) + "}";
    }
};

} // namespace diffmix
