#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "layoutlab/rng.hpp"

namespace layoutlab::numcore {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Values are kept in 64-bit during all
// computation; the on-disk format (TNSR) stores float32.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s)
        : shape(std::move(s)), data(static_cast<size_t>(layoutlab::numcore::numel(shape)), 0.0) {}
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v) { return full({1}, v); }
    static Tensor randn(Shape s, Rng& rng, double stddev = 1.0);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    int64_t cols() const;  // product of trailing extents

    double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
    double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
    bool bit_equal(const Tensor& other) const;
    double max_abs_diff(const Tensor& other) const;
};

// Raw tensor file format: magic "TNSR", version u32, rank u32,
// extents u32[rank], then little-endian f32 payload in row-major order.
void write_tnsr(std::ostream& out, const Tensor& t);
Tensor read_tnsr(std::istream& in);
void save_tnsr(const std::string& path, const Tensor& t);
Tensor load_tnsr(const std::string& path);

}  // namespace layoutlab::numcore
