#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "modalign/tensor.hpp"

namespace modalign {

enum class LayerKind { Conv, Relu, LeakyRelu, GlobalAvgPool, Flatten, Linear };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int in = 0;   // input channels / features
    int out = 0;  // output channels / features
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    float slope = 0.2f;  // LeakyRelu only

    static LayerSpec conv(int in, int out, int kernel, int stride, int pad) {
        return {LayerKind::Conv, in, out, kernel, stride, pad, 0.0f};
    }
    static LayerSpec relu() { return {LayerKind::Relu}; }
    static LayerSpec leaky_relu(float slope) {
        LayerSpec s{LayerKind::LeakyRelu};
        s.slope = slope;
        return s;
    }
    static LayerSpec global_avg_pool() { return {LayerKind::GlobalAvgPool}; }
    static LayerSpec flatten() { return {LayerKind::Flatten}; }
    static LayerSpec linear(int in, int out) { return {LayerKind::Linear, in, out, 1, 1, 0, 0.0f}; }
};

struct Param {
    std::string name;
    std::vector<float> value;
};

/// Per-layer scratch recorded during a training forward pass.
struct Tape {
    std::vector<Tensor> inputs;
    std::vector<std::vector<float>> cols;  // im2col buffers for Conv layers
};

/// Gradient buffers matching Network::params() one to one.
struct Gradients {
    std::vector<std::vector<float>> g;
    void zero();
    void scale(float s);
};

/// Feed-forward stack of layers with hand-written backward passes.
/// Parameters are read-only during forward/backward; gradients go to a
/// caller-owned Gradients object.
class Network {
public:
    Network() = default;
    explicit Network(std::vector<LayerSpec> layers);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    std::size_t parameter_count() const;

    /// He-style fan-in normal init for weights, zeros for biases.
    void init_he(std::mt19937_64& rng);
    void zero();

    Tensor forward(const Tensor& x, Tape* tape = nullptr) const;
    /// Returns dL/dx. Parameter gradients accumulate into grads when non-null.
    Tensor backward(const Tensor& grad_out, const Tape& tape, Gradients* grads) const;

    Gradients make_gradients() const;

    /// FNV-1a over all parameter bytes.
    std::uint64_t digest() const;

    /// Output (c, h, w) for a given input (c, h, w); throws ShapeError on mismatch.
    std::array<int, 3> output_shape(int c, int h, int w) const;

private:
    std::vector<LayerSpec> layers_;
    std::vector<Param> params_;
    std::vector<int> param_index_;  // first param of each layer, -1 if none
};

}  // namespace modalign
