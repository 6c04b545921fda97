#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace fga {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

std::string to_string(const Shape& shape);

/// Dense row-major tensor of doubles.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(element_count(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> d);

    std::size_t rank() const { return shape.size(); }
    std::size_t size() const { return data.size(); }
    std::span<const double> values() const { return data; }

    /// Element (r, c) of a rank-2 tensor.
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
    /// Element (ch, r, c) of a rank-3 tensor.
    double at(std::size_t ch, std::size_t r, std::size_t c) const {
        return data[(ch * shape[1] + r) * shape[2] + c];
    }

    bool operator==(const Tensor&) const = default;
};

}  // namespace fga
