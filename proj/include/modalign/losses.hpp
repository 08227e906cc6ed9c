#pragma once

#include <array>
#include <string>

namespace modalign {

/// Probability floor applied before every logarithm.
inline constexpr double kProbEps = 1e-7;
/// Default triplet margin.
inline constexpr double kDefaultMargin = 0.85;

using Logits2 = std::array<double, 2>;
using Vec2 = std::array<double, 2>;

/// Two-class probability vector: components in [eps, 1], summing to 1.
class ClassDistribution {
public:
    ClassDistribution() : p_{0.5, 0.5} {}
    /// Clamps to [eps, 1] and renormalizes; throws NumericError on non-finite or negative input.
    static ClassDistribution from_probs(double p0, double p1);

    double operator[](int i) const { return p_[static_cast<std::size_t>(i)]; }
    const Vec2& values() const { return p_; }
    int argmax() const { return p_[1] > p_[0] ? 1 : 0; }  // ties go to class 0

private:
    explicit ClassDistribution(const Vec2& p) : p_(p) {}
    Vec2 p_;
};

double sigmoid(double z);
double clamp_prob(double p);

ClassDistribution softmax(const Logits2& logits);
/// Vector-Jacobian product of softmax at `logits`; zero in clamped components.
Logits2 softmax_backward(const Logits2& logits, const Vec2& grad_probs);

double cross_entropy_class(const Logits2& logits, int label);
Logits2 cross_entropy_class_grad(const Logits2& logits, int label);

/// Binary cross-entropy of a clamped probability against target 0 or 1.
double bce(double prob, int target);
double bce_grad(double prob, int target);
/// d bce(clamp(sigmoid(z)), target) / dz.
double bce_logit_grad(double logit, int target);

/// -log D(X_a): the student wants D to call its features real.
double alignment_loss(double d_out_on_aligned);
double alignment_loss_grad(double d_out_on_aligned);

/// bce(D(X_p), 1) + bce(D(X_a), 0).
double discriminator_loss(double d_out_on_positive, double d_out_on_aligned);
Vec2 discriminator_loss_grad(double d_out_on_positive, double d_out_on_aligned);

/// sum_i p_i log(p_i / q_i), natural log.
double kl_divergence(const ClassDistribution& p, const ClassDistribution& q);
struct KlGrad {
    Vec2 dp;
    Vec2 dq;
};
KlGrad kl_divergence_grad(const ClassDistribution& p, const ClassDistribution& q);

/// Which argument slot the aligned distribution occupies inside KL.
enum class KlOrder { AlignedFirst, AlignedSecond };

struct TripletConfig {
    double margin = kDefaultMargin;
    KlOrder order = KlOrder::AlignedFirst;

    void validate() const;
};

/// The two divergences the hinge compares.
struct TripletTerms {
    double kl_ap = 0;  // anchor vs positive
    double kl_an = 0;  // anchor vs negative
};
TripletTerms triplet_terms(const ClassDistribution& a, const ClassDistribution& p, const ClassDistribution& n,
                           KlOrder order = KlOrder::AlignedFirst);

/// max(kl_ap - kl_an + margin, 0).
double triplet_contrastive(const ClassDistribution& a, const ClassDistribution& p, const ClassDistribution& n,
                           const TripletConfig& cfg = {});
/// Gradient w.r.t. the anchor distribution only; positive and negative are constants.
Vec2 triplet_contrastive_grad(const ClassDistribution& a, const ClassDistribution& p, const ClassDistribution& n,
                              const TripletConfig& cfg = {});

/// Coefficients of the student objective. Zeros reproduce the ablations.
struct LossWeights {
    double c = 1.0;
    double a = 1.0;
    double t = 1.0;

    bool operator==(const LossWeights&) const = default;
    /// "full", "w/o DA", "w/o CL" or an explicit weight triple.
    std::string method_label() const;
    static LossWeights parse(const std::string& text);  // "1,1,1"
};

/// w_c * l_c + w_a * l_a + w_t * l_t; throws NumericError naming a non-finite term.
double total_loss(double l_c, double l_a, double l_t, const LossWeights& weights = {});

}  // namespace modalign
