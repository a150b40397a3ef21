#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <vector>

namespace asc {

// Dense row-major n-d array of doubles. `grad` is empty unless allocated,
// in which case it has the same length as `data`.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    void alloc_grad() { grad.assign(data.size(), 0.0); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
    bool has_grad() const { return !grad.empty(); }

    // rank-4 (b, h, w, c) indexing for activation maps
    int64_t idx4(int b, int h, int w, int c) const {
        return ((static_cast<int64_t>(b) * shape[1] + h) * shape[2] + w) * shape[3] + c;
    }
    double& at4(int b, int h, int w, int c) { return data[static_cast<size_t>(idx4(b, h, w, c))]; }
    double at4(int b, int h, int w, int c) const { return data[static_cast<size_t>(idx4(b, h, w, c))]; }

    // rank-2 (r, c)
    double& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    double at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }
};

}  // namespace asc
