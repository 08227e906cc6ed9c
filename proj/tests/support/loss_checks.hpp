#pragma once

// Randomized comparisons shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "modalign/losses.hpp"
#include "support/oracle.hpp"

namespace loss_checks {

struct Result {
    std::string name;
    int n = 0;
    double max_err = 0;
};

namespace detail {

inline std::array<long double, 2> ld2(const modalign::ClassDistribution& d) { return {d[0], d[1]}; }

struct Tracker {
    std::vector<Result> out;
    Result& at(const std::string& name) {
        for (auto& r : out)
            if (r.name == name) return r;
        out.push_back({name, 0, 0.0});
        return out.back();
    }
    void add(const std::string& name, double err) {
        Result& r = at(name);
        ++r.n;
        r.max_err = std::max(r.max_err, err);
    }
};

}  // namespace detail

/// Library values against the long double oracle. Logits span the clamp
/// region and probabilities include values inside the clamp floor.
inline std::vector<Result> oracle_suite(int n, std::uint64_t seed) {
    using namespace modalign;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> z(-30, 30);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_real_distribution<double> margin(0, 2);
    detail::Tracker t;
    auto prob = [&] {
        const double r = u(rng);
        if (r < 0.05) return 1e-9 * u(rng);
        if (r < 0.10) return 1.0 - 1e-9 * u(rng);
        return u(rng);
    };
    for (int i = 0; i < n; ++i) {
        const double z0 = z(rng), z1 = z(rng);
        const int y = static_cast<int>(rng() & 1);
        const auto s = softmax({z0, z1});
        const auto so = oracle::softmax(z0, z1);
        t.add("softmax", std::max(oracle::rel_err(s[0], static_cast<double>(so[0])),
                                  oracle::rel_err(s[1], static_cast<double>(so[1]))));
        t.add("cross_entropy_class",
              oracle::rel_err(cross_entropy_class({z0, z1}, y), static_cast<double>(oracle::cross_entropy(z0, z1, y))));

        const double pp = prob(), pa = prob();
        t.add("bce", oracle::rel_err(bce(pp, y), static_cast<double>(oracle::bce(pp, y))));
        t.add("alignment_loss", oracle::rel_err(alignment_loss(pa), static_cast<double>(oracle::alignment(pa))));
        t.add("discriminator_loss",
              oracle::rel_err(discriminator_loss(pp, pa), static_cast<double>(oracle::discriminator(pp, pa))));

        const auto a = ClassDistribution::from_probs(prob(), prob());
        const auto p = ClassDistribution::from_probs(prob(), prob());
        const auto q = ClassDistribution::from_probs(prob(), prob());
        t.add("kl_divergence",
              oracle::rel_err(kl_divergence(a, p), static_cast<double>(oracle::kl(detail::ld2(a), detail::ld2(p)))));
        const double m = margin(rng);
        for (bool first : {true, false}) {
            TripletConfig cfg{m, first ? KlOrder::AlignedFirst : KlOrder::AlignedSecond};
            t.add("triplet_contrastive",
                  oracle::rel_err(triplet_contrastive(a, p, q, cfg),
                                  static_cast<double>(oracle::triplet(detail::ld2(a), detail::ld2(p), detail::ld2(q), m, first))));
        }
    }
    return t.out;
}

/// Analytic gradients against central differences (step 1e-5) at n random
/// points per loss and input.
inline std::vector<Result> gradient_suite(int n, std::uint64_t seed) {
    using namespace modalign;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> z(-4, 4);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    detail::Tracker t;
    auto g = [](double analytic, double numeric) { return oracle::grad_err(analytic, numeric); };

    for (int i = 0; i < n; ++i) {
        const double z0 = z(rng), z1 = z(rng);
        const int y = static_cast<int>(rng() & 1);
        const auto ce = cross_entropy_class_grad({z0, z1}, y);
        t.add("cross_entropy_class/logits",
              std::max(g(ce[0], oracle::fd([&](double x) { return cross_entropy_class({x, z1}, y); }, z0)),
                       g(ce[1], oracle::fd([&](double x) { return cross_entropy_class({z0, x}, y); }, z1))));

        const double pr = u(rng), pa = u(rng);
        t.add("bce/prob", g(bce_grad(pr, y), oracle::fd([&](double x) { return bce(x, y); }, pr)));
        t.add("bce/logit", g(bce_logit_grad(z0, y), oracle::fd([&](double x) { return bce(sigmoid(x), y); }, z0)));
        t.add("alignment_loss/prob", g(alignment_loss_grad(pa), oracle::fd([](double x) { return alignment_loss(x); }, pa)));
        const auto dg = discriminator_loss_grad(pr, pa);
        t.add("discriminator_loss/probs",
              std::max(g(dg[0], oracle::fd([&](double x) { return discriminator_loss(x, pa); }, pr)),
                       g(dg[1], oracle::fd([&](double x) { return discriminator_loss(pr, x); }, pa))));

        // Distribution gradients are pulled back through softmax, the path
        // the trainer uses.
        const Logits2 za{z(rng), z(rng)}, zp{z(rng), z(rng)}, zn{z(rng), z(rng)};
        const auto a = softmax(za), p = softmax(zp), nn = softmax(zn);
        const auto kg = kl_divergence_grad(a, p);
        const auto dza = softmax_backward(za, kg.dp);
        const auto dzp = softmax_backward(zp, kg.dq);
        double err = 0;
        for (int k = 0; k < 2; ++k) {
            auto fa = [&](double x) { Logits2 w = za; w[k] = x; return kl_divergence(softmax(w), p); };
            auto fp = [&](double x) { Logits2 w = zp; w[k] = x; return kl_divergence(a, softmax(w)); };
            err = std::max({err, g(dza[k], oracle::fd(fa, za[k])), g(dzp[k], oracle::fd(fp, zp[k]))});
        }
        t.add("kl_divergence/p,q", err);

        for (bool first : {true, false}) {
            TripletConfig cfg{0.85, first ? KlOrder::AlignedFirst : KlOrder::AlignedSecond};
            const auto terms = triplet_terms(a, p, nn, cfg.order);
            if (std::abs(terms.kl_ap - terms.kl_an + cfg.margin) < 1e-3) continue;  // hinge kink
            const auto tg = softmax_backward(za, triplet_contrastive_grad(a, p, nn, cfg));
            double e = 0;
            for (int k = 0; k < 2; ++k) {
                auto f = [&](double x) { Logits2 w = za; w[k] = x; return triplet_contrastive(softmax(w), p, nn, cfg); };
                e = std::max(e, g(tg[k], oracle::fd(f, za[k])));
            }
            t.add(first ? "triplet_contrastive/anchor" : "triplet_contrastive/anchor (reversed KL)", e);
        }

        const LossWeights w{u(rng), u(rng), u(rng)};
        const double lc = u(rng), la = u(rng), lt = u(rng);
        t.add("total_loss/terms",
              std::max({g(w.c, oracle::fd([&](double x) { return total_loss(x, la, lt, w); }, lc)),
                        g(w.a, oracle::fd([&](double x) { return total_loss(lc, x, lt, w); }, la)),
                        g(w.t, oracle::fd([&](double x) { return total_loss(lc, la, x, w); }, lt))}));
    }
    return t.out;
}

}  // namespace loss_checks
