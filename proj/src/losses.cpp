#include "modalign/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "modalign/error.hpp"

namespace modalign {

ClassDistribution ClassDistribution::from_probs(double p0, double p1) {
    if (!std::isfinite(p0) || !std::isfinite(p1) || p0 < 0.0 || p1 < 0.0 || p0 + p1 <= 0.0) {
        throw NumericError("invalid class distribution");
    }
    Vec2 p{std::clamp(p0, kProbEps, 1.0), std::clamp(p1, kProbEps, 1.0)};
    const double s = p[0] + p[1];
    const double q0 = p[0] / s;
    if (q0 < kProbEps) return ClassDistribution({kProbEps, 1.0 - kProbEps});
    if (1.0 - q0 < kProbEps) return ClassDistribution({1.0 - kProbEps, kProbEps});
    return ClassDistribution({q0, p[1] / s});
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

ClassDistribution softmax(const Logits2& logits) {
    if (!std::isfinite(logits[0]) || !std::isfinite(logits[1])) throw NumericError("non-finite logits");
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    return ClassDistribution::from_probs(e0 / (e0 + e1), e1 / (e0 + e1));
}

Logits2 softmax_backward(const Logits2& logits, const Vec2& grad_probs) {
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    const double s0 = e0 / (e0 + e1);
    const double s1 = e1 / (e0 + e1);
    // Inside the clamp region the clamped output is constant.
    if (s0 < kProbEps || s1 < kProbEps) return {0.0, 0.0};
    const double dot = grad_probs[0] * s0 + grad_probs[1] * s1;
    return {s0 * (grad_probs[0] - dot), s1 * (grad_probs[1] - dot)};
}

namespace {

void check_label(int label) {
    if (label != 0 && label != 1) throw ContractError("class label " + std::to_string(label) + " outside {0,1}");
}

}  // namespace

double cross_entropy_class(const Logits2& logits, int label) {
    check_label(label);
    return -std::log(softmax(logits)[label]);
}

Logits2 cross_entropy_class_grad(const Logits2& logits, int label) {
    check_label(label);
    const ClassDistribution p = softmax(logits);
    Vec2 g{0.0, 0.0};
    g[static_cast<std::size_t>(label)] = -1.0 / p[label];
    return softmax_backward(logits, g);
}

double bce(double prob, int target) {
    check_label(target);
    const double p = clamp_prob(prob);
    return target == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double bce_grad(double prob, int target) {
    check_label(target);
    if (prob < kProbEps || prob > 1.0 - kProbEps) return 0.0;
    return target == 1 ? -1.0 / prob : 1.0 / (1.0 - prob);
}

double bce_logit_grad(double logit, int target) {
    const double s = sigmoid(logit);
    return bce_grad(s, target) * s * (1.0 - s);
}

double alignment_loss(double d_out_on_aligned) { return bce(d_out_on_aligned, 1); }

double alignment_loss_grad(double d_out_on_aligned) { return bce_grad(d_out_on_aligned, 1); }

double discriminator_loss(double d_out_on_positive, double d_out_on_aligned) {
    return bce(d_out_on_positive, 1) + bce(d_out_on_aligned, 0);
}

Vec2 discriminator_loss_grad(double d_out_on_positive, double d_out_on_aligned) {
    return {bce_grad(d_out_on_positive, 1), bce_grad(d_out_on_aligned, 0)};
}

double kl_divergence(const ClassDistribution& p, const ClassDistribution& q) {
    double s = 0.0;
    for (int i = 0; i < 2; ++i) s += p[i] * std::log(p[i] / q[i]);
    return std::max(s, 0.0);
}

KlGrad kl_divergence_grad(const ClassDistribution& p, const ClassDistribution& q) {
    KlGrad g{};
    for (int i = 0; i < 2; ++i) {
        g.dp[static_cast<std::size_t>(i)] = std::log(p[i] / q[i]) + 1.0;
        g.dq[static_cast<std::size_t>(i)] = -p[i] / q[i];
    }
    return g;
}

void TripletConfig::validate() const {
    if (!(margin >= 0.0) || !std::isfinite(margin)) throw ConfigError("triplet margin must be non-negative");
}

TripletTerms triplet_terms(const ClassDistribution& a, const ClassDistribution& p, const ClassDistribution& n,
                           KlOrder order) {
    if (order == KlOrder::AlignedFirst) return {kl_divergence(a, p), kl_divergence(a, n)};
    return {kl_divergence(p, a), kl_divergence(n, a)};
}

double triplet_contrastive(const ClassDistribution& a, const ClassDistribution& p, const ClassDistribution& n,
                           const TripletConfig& cfg) {
    const TripletTerms t = triplet_terms(a, p, n, cfg.order);
    return std::max(t.kl_ap - t.kl_an + cfg.margin, 0.0);
}

Vec2 triplet_contrastive_grad(const ClassDistribution& a, const ClassDistribution& p, const ClassDistribution& n,
                              const TripletConfig& cfg) {
    const TripletTerms t = triplet_terms(a, p, n, cfg.order);
    if (!(t.kl_ap - t.kl_an + cfg.margin > 0.0)) return {0.0, 0.0};
    if (cfg.order == KlOrder::AlignedFirst) {
        const KlGrad gp = kl_divergence_grad(a, p);
        const KlGrad gn = kl_divergence_grad(a, n);
        return {gp.dp[0] - gn.dp[0], gp.dp[1] - gn.dp[1]};
    }
    const KlGrad gp = kl_divergence_grad(p, a);
    const KlGrad gn = kl_divergence_grad(n, a);
    return {gp.dq[0] - gn.dq[0], gp.dq[1] - gn.dq[1]};
}

std::string LossWeights::method_label() const {
    if (c == 1.0 && a == 1.0 && t == 1.0) return "full";
    if (c == 1.0 && a == 0.0 && t == 1.0) return "w/o DA";
    if (c == 1.0 && a == 1.0 && t == 0.0) return "w/o CL";
    if (c == 1.0 && a == 0.0 && t == 0.0) return "w/o DA+CL";
    std::ostringstream os;
    os << "w=" << c << "," << a << "," << t;
    return os.str();
}

LossWeights LossWeights::parse(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("loss weights must be three numbers like 1,1,1; got '" + text + "'");
        }
    }
    if (v.size() != 3) throw ConfigError("loss weights must be three numbers like 1,1,1; got '" + text + "'");
    for (double x : v) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("loss weights must be non-negative");
    }
    return {v[0], v[1], v[2]};
}

double total_loss(double l_c, double l_a, double l_t, const LossWeights& weights) {
    if (!std::isfinite(l_c)) throw NumericError("non-finite loss term l_c");
    if (!std::isfinite(l_a)) throw NumericError("non-finite loss term l_a");
    if (!std::isfinite(l_t)) throw NumericError("non-finite loss term l_t");
    return weights.c * l_c + weights.a * l_a + weights.t * l_t;
}

}  // namespace modalign
