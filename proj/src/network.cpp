#include "modalign/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <Eigen/Core>

#include "modalign/error.hpp"

namespace modalign {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

int conv_out(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

void im2col(const float* x, int c, int h, int w, const LayerSpec& s, int ho, int wo, float* cols) {
    const int k = s.kernel;
    const int p = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                float* row = cols + static_cast<std::size_t>((ch * k + ki) * k + kj) * p;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.pad + ki;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s.stride - s.pad + kj;
                        row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                                ? x[(static_cast<std::size_t>(ch) * h + iy) * w + ix]
                                                : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* cols, int c, int h, int w, const LayerSpec& s, int ho, int wo, float* dx) {
    const int k = s.kernel;
    const int p = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const float* row = cols + static_cast<std::size_t>((ch * k + ki) * k + kj) * p;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s.stride - s.pad + kj;
                        if (ix < 0 || ix >= w) continue;
                        dx[(static_cast<std::size_t>(ch) * h + iy) * w + ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

void Gradients::zero() {
    for (auto& v : g) std::fill(v.begin(), v.end(), 0.0f);
}

void Gradients::scale(float s) {
    for (auto& v : g) {
        for (auto& x : v) x *= s;
    }
}

Network::Network(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    param_index_.assign(layers_.size(), -1);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& s = layers_[i];
        if (s.kind == LayerKind::Conv || s.kind == LayerKind::Linear) {
            if (s.in <= 0 || s.out <= 0) throw ShapeError("layer " + std::to_string(i) + " has no width");
            const std::string base = (s.kind == LayerKind::Conv ? "conv" : "fc") + std::to_string(i);
            const std::size_t fan_in = s.kind == LayerKind::Conv
                                           ? static_cast<std::size_t>(s.in) * s.kernel * s.kernel
                                           : static_cast<std::size_t>(s.in);
            param_index_[i] = static_cast<int>(params_.size());
            params_.push_back({base + ".weight", std::vector<float>(fan_in * s.out, 0.0f)});
            params_.push_back({base + ".bias", std::vector<float>(static_cast<std::size_t>(s.out), 0.0f)});
        }
    }
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void Network::init_he(std::mt19937_64& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (param_index_[i] < 0) continue;
        const auto& s = layers_[i];
        const double fan_in = s.kind == LayerKind::Conv ? double(s.in) * s.kernel * s.kernel : double(s.in);
        std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
        auto& wgt = params_[static_cast<std::size_t>(param_index_[i])].value;
        for (auto& v : wgt) v = dist(rng);
        auto& bias = params_[static_cast<std::size_t>(param_index_[i]) + 1].value;
        std::fill(bias.begin(), bias.end(), 0.0f);
    }
}

void Network::zero() {
    for (auto& p : params_) std::fill(p.value.begin(), p.value.end(), 0.0f);
}

Gradients Network::make_gradients() const {
    Gradients g;
    for (const auto& p : params_) g.g.emplace_back(p.value.size(), 0.0f);
    return g;
}

std::uint64_t Network::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params_) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
        for (std::size_t i = 0; i < p.value.size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::array<int, 3> Network::output_shape(int c, int h, int w) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& s = layers_[i];
        switch (s.kind) {
            case LayerKind::Conv:
                if (c != s.in) {
                    throw ShapeError("layer " + std::to_string(i) + ": expected " + std::to_string(s.in) +
                                     " channels, got " + std::to_string(c));
                }
                h = conv_out(h, s.kernel, s.stride, s.pad);
                w = conv_out(w, s.kernel, s.stride, s.pad);
                if (h <= 0 || w <= 0) throw ShapeError("layer " + std::to_string(i) + ": input too small");
                c = s.out;
                break;
            case LayerKind::GlobalAvgPool: h = w = 1; break;
            case LayerKind::Flatten: c = c * h * w; h = w = 1; break;
            case LayerKind::Linear:
                if (c * h * w != s.in) {
                    throw ShapeError("layer " + std::to_string(i) + ": expected " + std::to_string(s.in) +
                                     " features, got " + std::to_string(c * h * w));
                }
                c = s.out;
                h = w = 1;
                break;
            case LayerKind::Relu:
            case LayerKind::LeakyRelu: break;
        }
    }
    return {c, h, w};
}

Tensor Network::forward(const Tensor& x, Tape* tape) const {
    output_shape(x.c, x.h, x.w);
    if (tape) {
        tape->inputs.assign(layers_.size(), Tensor{});
        tape->cols.assign(layers_.size(), {});
    }
    Tensor cur = x;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const auto& s = layers_[li];
        Tensor next;
        switch (s.kind) {
            case LayerKind::Conv: {
                const int ho = conv_out(cur.h, s.kernel, s.stride, s.pad);
                const int wo = conv_out(cur.w, s.kernel, s.stride, s.pad);
                const int kdim = s.in * s.kernel * s.kernel;
                const int p = ho * wo;
                next = Tensor(cur.n, s.out, ho, wo);
                const auto& wv = params_[static_cast<std::size_t>(param_index_[li])].value;
                const auto& bv = params_[static_cast<std::size_t>(param_index_[li]) + 1].value;
                ConstRowMap wm(wv.data(), s.out, kdim);
                std::vector<float> local;
                std::vector<float>* cols = &local;
                if (tape) cols = &tape->cols[li];
                cols->assign(static_cast<std::size_t>(cur.n) * kdim * p, 0.0f);
                // One GEMM per sample keeps every sample's arithmetic independent of batch size.
                for (int i = 0; i < cur.n; ++i) {
                    float* ci = cols->data() + static_cast<std::size_t>(i) * kdim * p;
                    im2col(cur.sample(i), cur.c, cur.h, cur.w, s, ho, wo, ci);
                    RowMap om(next.sample(i), s.out, p);
                    om.noalias() = wm * ConstRowMap(ci, kdim, p);
                    for (int o = 0; o < s.out; ++o) om.row(o).array() += bv[static_cast<std::size_t>(o)];
                }
                break;
            }
            case LayerKind::Relu:
                next = cur;
                for (auto& v : next.data) v = v < 0.0f ? 0.0f : v;
                break;
            case LayerKind::LeakyRelu:
                next = cur;
                for (auto& v : next.data) v = v > 0.0f ? v : s.slope * v;
                break;
            case LayerKind::GlobalAvgPool: {
                next = Tensor(cur.n, cur.c, 1, 1);
                const int plane = cur.h * cur.w;
                for (int i = 0; i < cur.n; ++i) {
                    const float* src = cur.sample(i);
                    for (int ch = 0; ch < cur.c; ++ch) {
                        double acc = 0.0;
                        for (int q = 0; q < plane; ++q) acc += src[ch * plane + q];
                        next.sample(i)[ch] = static_cast<float>(acc / plane);
                    }
                }
                break;
            }
            case LayerKind::Flatten:
                next = cur;
                next.c = cur.c * cur.h * cur.w;
                next.h = next.w = 1;
                break;
            case LayerKind::Linear: {
                next = Tensor(cur.n, s.out, 1, 1);
                const auto& wv = params_[static_cast<std::size_t>(param_index_[li])].value;
                const auto& bv = params_[static_cast<std::size_t>(param_index_[li]) + 1].value;
                for (int i = 0; i < cur.n; ++i) {
                    const float* xi = cur.sample(i);
                    float* yi = next.sample(i);
                    for (int o = 0; o < s.out; ++o) {
                        const float* wr = wv.data() + static_cast<std::size_t>(o) * s.in;
                        float acc = bv[static_cast<std::size_t>(o)];
                        for (int k = 0; k < s.in; ++k) acc += wr[k] * xi[k];
                        yi[o] = acc;
                    }
                }
                break;
            }
        }
        if (tape) tape->inputs[li] = std::move(cur);
        cur = std::move(next);
    }
    return cur;
}

Tensor Network::backward(const Tensor& grad_out, const Tape& tape, Gradients* grads) const {
    if (tape.inputs.size() != layers_.size()) throw ContractError("backward called without a matching tape");
    Tensor g = grad_out;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& s = layers_[li];
        const Tensor& x = tape.inputs[li];
        Tensor gx;
        switch (s.kind) {
            case LayerKind::Conv: {
                const int ho = g.h;
                const int wo = g.w;
                const int kdim = s.in * s.kernel * s.kernel;
                const int p = ho * wo;
                const std::size_t wi = static_cast<std::size_t>(param_index_[li]);
                ConstRowMap wm(params_[wi].value.data(), s.out, kdim);
                gx = Tensor(x.n, x.c, x.h, x.w);
                std::vector<float> dcols(static_cast<std::size_t>(kdim) * p);
                for (int i = 0; i < x.n; ++i) {
                    ConstRowMap gm(g.sample(i), s.out, p);
                    const float* ci = tape.cols[li].data() + static_cast<std::size_t>(i) * kdim * p;
                    if (grads) {
                        RowMap dw(grads->g[wi].data(), s.out, kdim);
                        dw.noalias() += gm * ConstRowMap(ci, kdim, p).transpose();
                        auto& db = grads->g[wi + 1];
                        for (int o = 0; o < s.out; ++o) db[static_cast<std::size_t>(o)] += gm.row(o).sum();
                    }
                    RowMap dc(dcols.data(), kdim, p);
                    dc.noalias() = wm.transpose() * gm;
                    col2im(dcols.data(), x.c, x.h, x.w, s, ho, wo, gx.sample(i));
                }
                break;
            }
            case LayerKind::Relu:
                gx = g;
                for (std::size_t k = 0; k < gx.data.size(); ++k) {
                    if (!(x.data[k] > 0.0f)) gx.data[k] = 0.0f;
                }
                break;
            case LayerKind::LeakyRelu:
                gx = g;
                for (std::size_t k = 0; k < gx.data.size(); ++k) {
                    if (!(x.data[k] > 0.0f)) gx.data[k] *= s.slope;
                }
                break;
            case LayerKind::GlobalAvgPool: {
                gx = Tensor(x.n, x.c, x.h, x.w);
                const int plane = x.h * x.w;
                for (int i = 0; i < x.n; ++i) {
                    for (int ch = 0; ch < x.c; ++ch) {
                        const float v = g.sample(i)[ch] / static_cast<float>(plane);
                        float* dst = gx.sample(i) + static_cast<std::size_t>(ch) * plane;
                        std::fill(dst, dst + plane, v);
                    }
                }
                break;
            }
            case LayerKind::Flatten:
                gx = g;
                gx.c = x.c;
                gx.h = x.h;
                gx.w = x.w;
                break;
            case LayerKind::Linear: {
                const std::size_t wi = static_cast<std::size_t>(param_index_[li]);
                const auto& wv = params_[wi].value;
                gx = Tensor(x.n, x.c, x.h, x.w);
                for (int i = 0; i < x.n; ++i) {
                    const float* gi = g.sample(i);
                    const float* xi = x.sample(i);
                    float* dxi = gx.sample(i);
                    for (int o = 0; o < s.out; ++o) {
                        const float go = gi[o];
                        const float* wr = wv.data() + static_cast<std::size_t>(o) * s.in;
                        for (int k = 0; k < s.in; ++k) dxi[k] += go * wr[k];
                        if (grads) {
                            float* dw = grads->g[wi].data() + static_cast<std::size_t>(o) * s.in;
                            for (int k = 0; k < s.in; ++k) dw[k] += go * xi[k];
                            grads->g[wi + 1][static_cast<std::size_t>(o)] += go;
                        }
                    }
                }
                break;
            }
        }
        g = std::move(gx);
    }
    return g;
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

Tensor Tensor::slice(int first, int count) const {
    if (first < 0 || count < 0 || first + count > n) throw ShapeError("tensor slice out of range");
    Tensor t(count, c, h, w);
    std::copy(sample(first), sample(first) + static_cast<std::size_t>(count) * sample_size(), t.data.begin());
    return t;
}

Tensor Tensor::concat(const Tensor& a, const Tensor& b) {
    if (a.c != b.c || a.h != b.h || a.w != b.w) {
        throw ShapeError("concat shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
    Tensor t(a.n + b.n, a.c, a.h, a.w);
    std::copy(a.data.begin(), a.data.end(), t.data.begin());
    std::copy(b.data.begin(), b.data.end(), t.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return t;
}

}  // namespace modalign
