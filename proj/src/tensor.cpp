#include "layoutlab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace layoutlab::numcore {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != layoutlab::numcore::numel(shape)) {
        throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::randn(Shape s, Rng& rng, double stddev) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = rng.normal(0.0, stddev);
    return t;
}

int64_t Tensor::cols() const {
    int64_t c = 1;
    for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
    if (shape != other.shape) return false;
    return std::memcmp(data.data(), other.data.data(), data.size() * sizeof(double)) == 0;
}

double Tensor::max_abs_diff(const Tensor& other) const {
    if (shape != other.shape)
        throw std::invalid_argument("shape mismatch: " + shape_str(shape) + " vs " + shape_str(other.shape));
    double m = 0.0;
    for (size_t i = 0; i < data.size(); ++i) m = std::max(m, std::abs(data[i] - other.data[i]));
    return m;
}

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("truncated tensor stream");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

constexpr uint32_t kTnsrVersion = 1;

}  // namespace

void write_tnsr(std::ostream& out, const Tensor& t) {
    out.write("TNSR", 4);
    put_u32(out, kTnsrVersion);
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int64_t e : t.shape) put_u32(out, static_cast<uint32_t>(e));
    for (double v : t.data) {
        const float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
}

Tensor read_tnsr(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TNSR", 4) != 0) throw std::runtime_error("bad tensor magic");
    const uint32_t version = get_u32(in);
    if (version != kTnsrVersion) throw std::runtime_error("unsupported tensor version " + std::to_string(version));
    const uint32_t rank = get_u32(in);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(get_u32(in));
    Tensor t(shape);
    for (auto& v : t.data) {
        const uint32_t bits = get_u32(in);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
    }
    return t;
}

void save_tnsr(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_tnsr(out, t);
}

Tensor load_tnsr(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_tnsr(in);
}

}  // namespace layoutlab::numcore
