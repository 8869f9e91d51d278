#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace coam {

// Dense row-major float64 tensor. All network math runs on these; float32
// only appears at the checkpoint boundary.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0)
        : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), fill) {}
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<long long>(data.size()))
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static long long numel_of(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= d;
        }
        return n;
    }

    long long numel() const { return static_cast<long long>(data.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(shape.size()); }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }

    // 3D (C,H,W) accessors used throughout the network code.
    double& at3(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at3(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
    double at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const;
};

std::string shape_str(const std::vector<int>& s);

// Thrown by graph primitives on incompatible operand shapes; the message
// names the primitive and the expected vs actual shapes.
struct ShapeError : std::runtime_error {
    ShapeError(const std::string& primitive, const std::string& expected, const std::string& actual)
        : std::runtime_error(primitive + ": shape mismatch, expected " + expected + ", got " + actual) {}
};

}  // namespace coam
