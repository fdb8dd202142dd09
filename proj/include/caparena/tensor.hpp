#ifndef CAPARENA_TENSOR_HPP
#define CAPARENA_TENSOR_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "caparena/errors.hpp"

namespace caparena::net {

// Dense 4-D array in [N, C, H, W] order, row-major, last index fastest.
// Vectors and per-sample feature maps reuse the same type with trailing
// dimensions set to 1, so every layer speaks one shape language.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw ShapeError("negative tensor dimension " + shape_str());
        v.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0);
    }

    std::size_t size() const { return v.size(); }

    std::size_t offset(int i, int j, int y, int x) const {
        return ((static_cast<std::size_t>(i) * c + j) * h + y) * w + x;
    }
    double& at(int i, int j, int y, int x) { return v[offset(i, j, y, x)]; }
    double at(int i, int j, int y, int x) const { return v[offset(i, j, y, x)]; }

    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    std::string shape_str() const {
        return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + "]";
    }
};

}  // namespace caparena::net

#endif
