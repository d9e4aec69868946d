#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "denomae/errors.hpp"

namespace denomae {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

inline int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ConfigError("tensor shape has non-positive dim " + shape_str(shape));
        n *= d;
    }
    return n;
}

// Dense row-major tensor. Value semantics; once built by an op it is not
// mutated (parameters are rebound per training step instead).
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape)) {
            throw ConfigError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        }
    }

    static TensorT full(std::vector<int> s, T v) {
        TensorT t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }
    static TensorT scalar(T v) { return full({1}, v); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    // rank-2 helpers
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }
    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    T at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
};

using Tensor = TensorT<float>;

template <typename To, typename From>
TensorT<To> cast_tensor(const TensorT<From>& src) {
    TensorT<To> out;
    out.shape = src.shape;
    out.data.resize(src.data.size());
    for (size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<To>(src.data[i]);
    return out;
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
    for (T v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

template <typename T>
void require_finite(const TensorT<T>& t, const char* what) {
    if (!all_finite(t)) throw NumericError(std::string(what) + ": non-finite values in output");
}

// "DTNSR v1" tensor file: magic DTNSR1\0\0, u32 rank, rank x u64 dims,
// little-endian f32 payload, row-major. Round-trips bit-exactly.
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

void append_tensor_bytes(const Tensor& t, std::string& out);
Tensor parse_tensor_bytes(const char* data, size_t size, size_t& consumed);

}  // namespace denomae
