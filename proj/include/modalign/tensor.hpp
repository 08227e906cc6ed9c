#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace modalign {

/// Dense NCHW float32 batch. Fully connected activations use h = w = 1.
struct Tensor {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    float* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    const float* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    std::span<const float> sample_span(int i) const { return {sample(i), sample_size()}; }

    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    std::string shape_string() const;
    bool all_finite() const;

    /// Rows [first, first + count) as a new tensor.
    Tensor slice(int first, int count) const;
    /// Concatenate along the batch axis.
    static Tensor concat(const Tensor& a, const Tensor& b);
};

}  // namespace modalign
