#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "spdda/errors.hpp"

namespace spdda {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape);

// Plain dense value tensor, row-major, 64-bit floats. All autodiff nodes,
// parameters and cube payloads are built on this.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), 0.0) {}
    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != numel(shape))
            throw shape_error("Tensor: data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
    }
    Tensor(Shape s, double fill) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), fill) {}

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    // rank-4 accessor, used by the image/feature code paths
    double& at4(int64_t b, int64_t c, int64_t y, int64_t x) {
        return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + y) * shape[3] + x)];
    }
    double at4(int64_t b, int64_t c, int64_t y, int64_t x) const {
        return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + y) * shape[3] + x)];
    }
    double& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    double at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }
};

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace spdda
