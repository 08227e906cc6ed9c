#pragma once

// Straight-line reference formulas in long double. They share no code with
// the library and skip its max-subtraction and branch tricks.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

namespace oracle {

using ld = long double;
inline constexpr ld kEps = 1e-7L;

inline std::array<ld, 2> clamp_renorm(ld p0, ld p1) {
    p0 = std::min<ld>(std::max<ld>(p0, kEps), 1.0L);
    p1 = std::min<ld>(std::max<ld>(p1, kEps), 1.0L);
    const ld q0 = p0 / (p0 + p1);
    if (q0 < kEps) return {kEps, 1.0L - kEps};
    if (1.0L - q0 < kEps) return {1.0L - kEps, kEps};
    return {q0, p1 / (p0 + p1)};
}

inline std::array<ld, 2> softmax(ld z0, ld z1) {
    const ld e0 = std::exp(z0);
    const ld e1 = std::exp(z1);
    return clamp_renorm(e0 / (e0 + e1), e1 / (e0 + e1));
}

inline ld cross_entropy(ld z0, ld z1, int label) { return -std::log(softmax(z0, z1)[label]); }

inline ld bce(ld prob, int target) {
    const ld p = std::min<ld>(std::max<ld>(prob, kEps), 1.0L - kEps);
    return -(target * std::log(p) + (1 - target) * std::log(1.0L - p));
}

inline ld alignment(ld d_a) { return bce(d_a, 1); }
inline ld discriminator(ld d_p, ld d_a) { return bce(d_p, 1) + bce(d_a, 0); }

inline ld kl(const std::array<ld, 2>& p, const std::array<ld, 2>& q) {
    ld s = 0;
    for (int i = 0; i < 2; ++i) s += p[i] * std::log(p[i] / q[i]);
    return std::max<ld>(s, 0.0L);
}

inline ld triplet(const std::array<ld, 2>& a, const std::array<ld, 2>& p, const std::array<ld, 2>& n, ld margin,
                  bool aligned_first = true) {
    const ld ap = aligned_first ? kl(a, p) : kl(p, a);
    const ld an = aligned_first ? kl(a, n) : kl(n, a);
    return std::max<ld>(ap - an + margin, 0.0L);
}

inline double rel_err(double got, double want) {
    const double den = std::max({std::abs(got), std::abs(want), 1e-300});
    return got == want ? 0.0 : std::abs(got - want) / den;
}

/// Central difference with step h.
inline double fd(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Relative error for gradient comparisons; tiny gradients are compared absolutely.
inline double grad_err(double analytic, double numeric) {
    const double den = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / den;
}

}  // namespace oracle
