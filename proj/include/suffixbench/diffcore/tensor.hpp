#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "suffixbench/common.hpp"

namespace suffixbench::diffcore {

// Shaped dense array, row-major. The scalar type is a template parameter:
// float for training, double for finite-difference verification.
template <class S>
struct Tensor {
    std::vector<long> shape;
    std::vector<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<long> shp, S fill = S(0))
        : shape(std::move(shp)), data(static_cast<size_t>(count(shape)), fill) {}

    static long count(const std::vector<long>& shp) {
        long n = 1;
        for (long d : shp) n *= d;
        return n;
    }

    long size() const { return static_cast<long>(data.size()); }
    long dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    static Tensor scalar(S v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

inline std::string shape_str(const std::vector<long>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline bool same_shape(const std::vector<long>& a, const std::vector<long>& b) { return a == b; }

}  // namespace suffixbench::diffcore
