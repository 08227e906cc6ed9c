#include "modalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "modalign/error.hpp"

namespace modalign {

namespace {

constexpr int kEvalChunk = 64;

// Distinct streams for the independently initialized networks of one run.
constexpr std::uint64_t kBackboneStream = 0x6261636b626fULL;
constexpr std::uint64_t kTeacherStream = 0x7465616368ULL;
constexpr std::uint64_t kUnalignedStream = 0x756e616c6eULL;
constexpr std::uint64_t kAlignStream = 0x616c69676eULL;

void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

}  // namespace

OptimizerConfig OptimizerConfig::synthetic() {
    OptimizerConfig c;
    c.epochs = 30;
    c.beta1 = 0.5;
    return c;
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

nlohmann::json OptimizerConfig::to_json() const {
    return {{"learning_rate", learning_rate}, {"weight_decay", weight_decay}, {"epochs", epochs},
            {"batch_size", batch_size},       {"seed", seed},                 {"beta1", beta1},
            {"beta2", beta2},                 {"adam_eps", adam_eps}};
}

Adam::Adam(const Network& net, const OptimizerConfig& cfg) : cfg_(cfg) {
    for (const auto& p : net.params()) {
        m_.emplace_back(p.value.size(), 0.0f);
        v_.emplace_back(p.value.size(), 0.0f);
    }
}

void Adam::step(Network& net, const Gradients& grads) {
    auto& params = net.params();
    if (params.size() != m_.size() || grads.g.size() != m_.size()) {
        throw ContractError("optimizer state does not match the network");
    }
    ++t_;
    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double lr = cfg_.learning_rate;
    const double wd = cfg_.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& w = params[k].value;
        const auto& g = grads.g[k];
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = static_cast<double>(g[i]) + wd * w[i];
            const double mi = b1 * m[i] + (1.0 - b1) * gi;
            const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            w[i] = static_cast<float>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.adam_eps));
        }
    }
}

void Adam::save(Checkpoint& ckpt, const std::string& prefix, const Network& net) const {
    const auto& params = net.params();
    for (std::size_t k = 0; k < params.size() && k < m_.size(); ++k) {
        ckpt.blobs[prefix + "/m/" + params[k].name] = m_[k];
        ckpt.blobs[prefix + "/v/" + params[k].name] = v_[k];
    }
    ckpt.config["optimizer_steps"][prefix] = t_;
}

void Adam::load(const Checkpoint& ckpt, const std::string& prefix, const Network& net) {
    const auto& params = net.params();
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto m = ckpt.blobs.find(prefix + "/m/" + params[k].name);
        const auto v = ckpt.blobs.find(prefix + "/v/" + params[k].name);
        if (m == ckpt.blobs.end() || v == ckpt.blobs.end()) {
            throw CompatibilityError("checkpoint lacks optimizer state for '" + prefix + "'");
        }
        m_[k] = m->second;
        v_[k] = v->second;
    }
    t_ = ckpt.config.at("optimizer_steps").at(prefix).get<std::int64_t>();
}

Extractor backbone_init(const ExtractorConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ kBackboneStream);
    return Extractor(cfg, rng);
}

Split Split::from_fold(const FoldPlan& plan, int fold) { return {plan.train_indices(fold), plan.valid_indices(fold)}; }

Tensor images_to_batch(const std::vector<cv::Mat>& images, const ChannelStats& stats) {
    if (images.empty()) return {};
    const int side = images.front().rows;
    Tensor t(static_cast<int>(images.size()), 3, side, images.front().cols);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].rows != t.h || images[i].cols != t.w) throw ShapeError("images in one batch differ in size");
        to_chw(images[i], stats, t.sample(static_cast<int>(i)));
    }
    return t;
}

Tensor make_image_batch(const std::vector<PixelPair>& pairs, const std::vector<std::size_t>& indices,
                        Modality modality, const ChannelStats& stats) {
    std::vector<cv::Mat> images;
    images.reserve(indices.size());
    for (std::size_t i : indices) images.push_back(modality == Modality::Weak ? pairs.at(i).wl : pairs.at(i).nbi);
    return images_to_batch(images, stats);
}

Tensor extract_features(const Extractor& ex, const std::vector<PixelPair>& pairs,
                        const std::vector<std::size_t>& indices, Modality modality, const ChannelStats& stats) {
    Tensor all;
    for (std::size_t first = 0; first < indices.size(); first += kEvalChunk) {
        const std::size_t last = std::min(indices.size(), first + kEvalChunk);
        const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(first),
                                             indices.begin() + static_cast<std::ptrdiff_t>(last));
        Tensor f = extractor_forward(ex, make_image_batch(pairs, chunk, modality, stats));
        all = all.n == 0 ? std::move(f) : Tensor::concat(all, f);
    }
    return all;
}

nlohmann::json to_json(const ExtractorConfig& cfg) {
    return {{"name", cfg.name}, {"in_side", cfg.in_side}, {"out_channels", cfg.out_channels},
            {"out_side", cfg.out_side}, {"init", cfg.init}};
}

ExtractorConfig extractor_config_from_json(const nlohmann::json& j) {
    try {
        ExtractorConfig c;
        c.name = j.at("name").get<std::string>();
        c.in_side = j.at("in_side").get<int>();
        c.out_channels = j.at("out_channels").get<int>();
        c.out_side = j.at("out_side").get<int>();
        c.init = j.value("init", std::string("random"));
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw CompatibilityError(std::string("checkpoint extractor config malformed: ") + e.what());
    }
}

nlohmann::json to_json(const ChannelStats& s) { return {{"mean", s.mean}, {"std", s.stdev}}; }

ChannelStats channel_stats_from_json(const nlohmann::json& j) {
    try {
        ChannelStats s;
        s.mean = j.at("mean").get<std::array<float, 3>>();
        s.stdev = j.at("std").get<std::array<float, 3>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw CompatibilityError(std::string("checkpoint channel stats malformed: ") + e.what());
    }
}

namespace {

double head_accuracy(const Extractor& ex, const ClassifierHead& head, const std::vector<PixelPair>& pairs,
                     const std::vector<std::size_t>& indices, Modality modality, const ChannelStats& stats) {
    if (indices.empty()) return 0.0;
    const Tensor feats = extract_features(ex, pairs, indices, modality, stats);
    const auto logits = head_logits(head.net.forward(feats));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (softmax(logits[i]).argmax() == pairs[indices[i]].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace

PretrainResult pretrain(Modality modality, const std::vector<PixelPair>& pairs, const Split& split,
                        const ExtractorConfig& ext_cfg, const OptimizerConfig& cfg, const AugmentPolicy& policy) {
    cfg.validate();
    ext_cfg.validate();
    policy.validate();
    if (split.train.empty()) throw ConfigError("pretrain: empty training split");

    const bool strong = modality == Modality::Strong;
    std::mt19937_64 rng(cfg.seed ^ (strong ? kTeacherStream : kUnalignedStream));
    Extractor ex = backbone_init(ext_cfg, cfg.seed);
    ClassifierHead head(strong ? HeadRole::F2 : HeadRole::F1, ext_cfg.out_channels, rng);
    Adam ex_opt(ex.net, cfg);
    Adam head_opt(head.net, cfg);
    const ChannelStats stats = compute_channel_stats(pairs, split.train, modality);

    PretrainResult result;
    auto snapshot = [&](int epoch) {
        Checkpoint ck;
        ck.epoch = epoch;
        ck.config["role"] = strong ? "teacher" : "unaligned";
        ck.config["extractor"] = to_json(ext_cfg);
        ck.config[strong ? "nbi_stats" : "wl_stats"] = to_json(stats);
        ck.config["optimizer"] = cfg.to_json();
        ck.put(strong ? "teacher" : "unaligned", ex.net);
        if (strong) ck.put("F2", head.net);
        return ck;
    };

    result.best_val_acc = head_accuracy(ex, head, pairs, split.valid, modality, stats);
    result.best_epoch = 0;
    result.checkpoint = snapshot(0);
    result.checkpoint.config["val_acc"] = result.best_val_acc;

    std::vector<std::size_t> order = split.train;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_indices(order, rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        int batch_no = 0;
        for (std::size_t first = 0; first < order.size(); first += bs, ++batch_no) {
            const std::size_t last = std::min(order.size(), first + bs);
            std::vector<cv::Mat> images;
            std::vector<int> labels;
            for (std::size_t k = first; k < last; ++k) {
                const PixelPair aug = augment(pairs[order[k]], policy, rng);
                images.push_back(strong ? aug.nbi : aug.wl);
                labels.push_back(aug.label);
            }
            const Tensor x = images_to_batch(images, stats);
            const int n = x.n;
            Tape ex_tape;
            Tape head_tape;
            Tensor g_out(n, kNumClasses, 1, 1);
            double batch_loss = 0.0;
            const auto diverged = [&](const std::string& why) {
                return TrainingError("pretrain diverged at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_no) + why);
            };
            try {
                const Tensor feats = extractor_forward(ex, x, &ex_tape);
                const auto logits = head_logits(head.net.forward(feats, &head_tape));
                for (int i = 0; i < n; ++i) {
                    const auto k = static_cast<std::size_t>(i);
                    batch_loss += cross_entropy_class(logits[k], labels[k]);
                    const auto g = cross_entropy_class_grad(logits[k], labels[k]);
                    g_out.sample(i)[0] = static_cast<float>(g[0] / n);
                    g_out.sample(i)[1] = static_cast<float>(g[1] / n);
                }
            } catch (const NumericError& e) {
                throw diverged(std::string(": ") + e.what());
            }
            if (!std::isfinite(batch_loss)) throw diverged("");
            Gradients head_grads = head.net.make_gradients();
            Gradients ex_grads = ex.net.make_gradients();
            const Tensor g_feat = head.net.backward(g_out, head_tape, &head_grads);
            ex.net.backward(g_feat, ex_tape, &ex_grads);
            head_opt.step(head.net, head_grads);
            ex_opt.step(ex.net, ex_grads);
            loss_sum += batch_loss;
            seen += static_cast<std::size_t>(n);
        }
        const double val_acc = head_accuracy(ex, head, pairs, split.valid, modality, stats);
        result.log.push_back({epoch, loss_sum / static_cast<double>(seen), val_acc});
        if (val_acc > result.best_val_acc) {
            result.best_val_acc = val_acc;
            result.best_epoch = epoch;
            result.checkpoint = snapshot(epoch);
            result.checkpoint.config["val_acc"] = val_acc;
        }
    }
    return result;
}

std::string pretrain_log_csv(const std::vector<PretrainEpoch>& log) {
    std::string out = "epoch,loss,val_acc\n";
    char buf[128];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f\n", e.epoch, e.loss, e.val_acc);
        out += buf;
    }
    return out;
}

AlignTrainState::AlignTrainState(const ExtractorConfig& cfg)
    : config(cfg),
      student(cfg),
      f1(HeadRole::F1, cfg.out_channels),
      disc(cfg),
      teacher(cfg),
      unaligned(cfg),
      f2(HeadRole::F2, cfg.out_channels) {}

std::uint64_t AlignTrainState::frozen_digest() const {
    std::uint64_t h = teacher.net.digest();
    h = h * 31 + unaligned.net.digest();
    h = h * 31 + f2.net.digest();
    return h;
}

AlignTrainState make_align_state(const Checkpoint& teacher_ckpt, const Checkpoint& unaligned_ckpt,
                                 const OptimizerConfig& cfg, const AlignOptions& options) {
    cfg.validate();
    options.triplet.validate();
    options.augment.validate();
    if (!teacher_ckpt.config.contains("extractor") || !unaligned_ckpt.config.contains("extractor")) {
        throw CompatibilityError("pretrain checkpoints must record their extractor config");
    }
    const ExtractorConfig ext = extractor_config_from_json(teacher_ckpt.config["extractor"]);
    if (!(extractor_config_from_json(unaligned_ckpt.config["extractor"]) == ext)) {
        throw CompatibilityError("teacher and unaligned checkpoints use different extractor configs");
    }
    if (!teacher_ckpt.has("teacher") || !teacher_ckpt.has("F2")) {
        throw CompatibilityError("teacher checkpoint must contain 'teacher' and 'F2'");
    }
    if (!unaligned_ckpt.has("unaligned")) throw CompatibilityError("unaligned checkpoint must contain 'unaligned'");
    if (!teacher_ckpt.config.contains("nbi_stats") || !unaligned_ckpt.config.contains("wl_stats")) {
        throw CompatibilityError("pretrain checkpoints must record normalization statistics");
    }

    AlignTrainState s(ext);
    s.opt = cfg;
    s.options = options;
    s.nbi_stats = channel_stats_from_json(teacher_ckpt.config["nbi_stats"]);
    s.wl_stats = channel_stats_from_json(unaligned_ckpt.config["wl_stats"]);
    teacher_ckpt.get("teacher", s.teacher.net);
    teacher_ckpt.get("F2", s.f2.net);
    unaligned_ckpt.get("unaligned", s.unaligned.net);

    s.rng.seed(cfg.seed ^ kAlignStream);
    if (options.student_init == "random") {
        s.student = backbone_init(ext, cfg.seed);
    } else if (options.student_init == "unaligned") {
        s.student.net = s.unaligned.net;
    } else if (options.student_init == "teacher") {
        s.student.net = s.teacher.net;
    } else {
        throw ConfigError("unknown student_init '" + options.student_init + "'");
    }
    s.f1.net.init_he(s.rng);
    s.disc.net.init_he(s.rng);
    s.student_opt = Adam(s.student.net, cfg);
    s.f1_opt = Adam(s.f1.net, cfg);
    s.disc_opt = Adam(s.disc.net, cfg);
    return s;
}

AlignBatch make_align_batch(AlignTrainState& state, const std::vector<PixelPair>& pairs,
                            const std::vector<std::size_t>& indices, bool augment_pairs) {
    std::vector<cv::Mat> wl;
    std::vector<cv::Mat> nbi;
    AlignBatch b;
    for (std::size_t i : indices) {
        const PixelPair& src = pairs.at(i);
        if (augment_pairs) {
            const PixelPair aug = augment(src, state.options.augment, state.rng);
            wl.push_back(aug.wl);
            nbi.push_back(aug.nbi);
        } else {
            wl.push_back(src.wl);
            nbi.push_back(src.nbi);
        }
        b.labels.push_back(src.label);
    }
    b.wl = images_to_batch(wl, state.wl_stats);
    b.nbi = images_to_batch(nbi, state.nbi_stats);
    return b;
}

namespace {

LossReport align_step_impl(AlignTrainState& s, const AlignBatch& batch) {
    const int n = batch.wl.n;
    if (n == 0) throw ContractError("align_step on an empty batch");
    if (batch.nbi.n != n || static_cast<int>(batch.labels.size()) != n) {
        throw ShapeError("align batch branches disagree in size");
    }
    const LossWeights& w = s.options.weights;

    // (1) features of the three branches
    const Tensor x_p = extractor_forward(s.teacher, batch.nbi);
    const Tensor x_n = extractor_forward(s.unaligned, batch.wl);
    Tape student_tape;
    const Tensor x_a = extractor_forward(s.student, batch.wl, &student_tape);
    if (!x_p.same_shape(x_a) || !x_n.same_shape(x_a)) throw ShapeError("feature shapes differ across branches");

    LossReport rep;
    const double inv_n = 1.0 / n;

    // (2) discriminator step on [X_p; X_a], X_a treated as a constant
    {
        Tape d_tape;
        const Tensor z = s.disc.net.forward(Tensor::concat(x_p, x_a), &d_tape);
        Tensor g(2 * n, 1, 1, 1);
        double l_d = 0.0;
        for (int i = 0; i < n; ++i) {
            const double zr = z.data[static_cast<std::size_t>(i)];
            const double zf = z.data[static_cast<std::size_t>(n + i)];
            l_d += discriminator_loss(clamp_prob(sigmoid(zr)), clamp_prob(sigmoid(zf)));
            g.data[static_cast<std::size_t>(i)] = static_cast<float>(bce_logit_grad(zr, 1) * inv_n);
            g.data[static_cast<std::size_t>(n + i)] = static_cast<float>(bce_logit_grad(zf, 0) * inv_n);
        }
        rep.l_d = l_d * inv_n;
        if (!std::isfinite(rep.l_d)) throw TrainingError("non-finite discriminator loss");
        Gradients dg = s.disc.net.make_gradients();
        s.disc.net.backward(g, d_tape, &dg);
        s.disc_opt.step(s.disc.net, dg);
    }

    // (3) student + F1 step on w_c L_c + w_a L_a + w_t L_t with D held fixed
    Tensor g_feat(x_a.n, x_a.c, x_a.h, x_a.w);
    auto accumulate = [&](const Tensor& g, double weight) {
        for (std::size_t k = 0; k < g.data.size(); ++k) g_feat.data[k] += static_cast<float>(weight * g.data[k]);
    };

    Gradients f1_grads = s.f1.net.make_gradients();
    {
        Tape f1_tape;
        const auto logits = head_logits(s.f1.net.forward(x_a, &f1_tape));
        Tensor g(n, kNumClasses, 1, 1);
        double l_c = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto& li = logits[static_cast<std::size_t>(i)];
            const int y = batch.labels[static_cast<std::size_t>(i)];
            l_c += cross_entropy_class(li, y);
            const auto gi = cross_entropy_class_grad(li, y);
            g.sample(i)[0] = static_cast<float>(w.c * gi[0] * inv_n);
            g.sample(i)[1] = static_cast<float>(w.c * gi[1] * inv_n);
        }
        rep.l_c = l_c * inv_n;
        accumulate(s.f1.net.backward(g, f1_tape, &f1_grads), 1.0);
    }

    if (w.a != 0.0) {
        Tape d_tape;
        const Tensor z = s.disc.net.forward(x_a, &d_tape);
        Tensor g(n, 1, 1, 1);
        double l_a = 0.0;
        for (int i = 0; i < n; ++i) {
            const double zi = z.data[static_cast<std::size_t>(i)];
            l_a += alignment_loss(clamp_prob(sigmoid(zi)));
            g.data[static_cast<std::size_t>(i)] = static_cast<float>(bce_logit_grad(zi, 1) * inv_n);
        }
        rep.l_a = l_a * inv_n;
        accumulate(s.disc.net.backward(g, d_tape, nullptr), w.a);
    }

    if (w.t != 0.0) {
        Tape f2_tape;
        const auto la = head_logits(s.f2.net.forward(x_a, &f2_tape));
        const auto lp = head_logits(s.f2.net.forward(x_p));
        const auto ln = head_logits(s.f2.net.forward(x_n));
        Tensor g(n, kNumClasses, 1, 1);
        double l_t = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(i);
            const ClassDistribution da = softmax(la[k]);
            const ClassDistribution dp = softmax(lp[k]);
            const ClassDistribution dn = softmax(ln[k]);
            l_t += triplet_contrastive(da, dp, dn, s.options.triplet);
            const auto gl = softmax_backward(la[k], triplet_contrastive_grad(da, dp, dn, s.options.triplet));
            g.sample(i)[0] = static_cast<float>(gl[0] * inv_n);
            g.sample(i)[1] = static_cast<float>(gl[1] * inv_n);
        }
        rep.l_t = l_t * inv_n;
        accumulate(s.f2.net.backward(g, f2_tape, nullptr), w.t);
    }

    rep.total = total_loss(rep.l_c, rep.l_a, rep.l_t, w);

    Gradients s_grads = s.student.net.make_gradients();
    s.student.net.backward(g_feat, student_tape, &s_grads);
    s.student_opt.step(s.student.net, s_grads);
    s.f1_opt.step(s.f1.net, f1_grads);
    return rep;
}

}  // namespace

LossReport align_step(AlignTrainState& s, const AlignBatch& batch) {
    try {
        return align_step_impl(s, batch);
    } catch (const NumericError& e) {
        throw TrainingError(std::string("alignment step diverged: ") + e.what());
    }
}

Checkpoint to_checkpoint(const AlignTrainState& s) {
    Checkpoint ck;
    ck.epoch = s.epoch;
    ck.rng_state = rng_to_string(s.rng);
    ck.config["role"] = "student";
    ck.config["extractor"] = to_json(s.config);
    ck.config["wl_stats"] = to_json(s.wl_stats);
    ck.config["nbi_stats"] = to_json(s.nbi_stats);
    ck.config["optimizer"] = s.opt.to_json();
    ck.config["weights"] = {s.options.weights.c, s.options.weights.a, s.options.weights.t};
    ck.config["method"] = s.options.weights.method_label();
    ck.config["margin"] = s.options.triplet.margin;
    ck.config["kl_order"] = s.options.triplet.order == KlOrder::AlignedFirst ? "aligned-first" : "aligned-second";
    ck.config["student_init"] = s.options.student_init;
    ck.put("student", s.student.net);
    ck.put("F1", s.f1.net);
    ck.put("D", s.disc.net);
    ck.put("teacher", s.teacher.net);
    ck.put("unaligned", s.unaligned.net);
    ck.put("F2", s.f2.net);
    s.student_opt.save(ck, "opt_student", s.student.net);
    s.f1_opt.save(ck, "opt_F1", s.f1.net);
    s.disc_opt.save(ck, "opt_D", s.disc.net);
    return ck;
}

std::string align_metrics_csv(const std::vector<AlignEpochMetrics>& log) {
    std::string out = "epoch,l_d,l_c,l_a,l_t,val_acc,triplet_sat_rate,probe_d_acc\n";
    char buf[256];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.l_d, e.l_c, e.l_a,
                      e.l_t, e.val_acc, e.triplet_sat_rate, e.probe_d_acc);
        out += buf;
    }
    return out;
}

namespace {

struct FrozenValidation {
    std::vector<ClassDistribution> dist_p;
    std::vector<ClassDistribution> dist_n;
    Tensor x_p;
};

FrozenValidation frozen_validation(const AlignTrainState& s, const std::vector<PixelPair>& pairs,
                                   const std::vector<std::size_t>& valid) {
    FrozenValidation fv;
    if (valid.empty()) return fv;
    fv.x_p = extract_features(s.teacher, pairs, valid, Modality::Strong, s.nbi_stats);
    const Tensor x_n = extract_features(s.unaligned, pairs, valid, Modality::Weak, s.wl_stats);
    for (const auto& l : head_logits(s.f2.net.forward(fv.x_p))) fv.dist_p.push_back(softmax(l));
    for (const auto& l : head_logits(s.f2.net.forward(x_n))) fv.dist_n.push_back(softmax(l));
    return fv;
}

void validate_epoch(const AlignTrainState& s, const std::vector<PixelPair>& pairs,
                    const std::vector<std::size_t>& valid, const FrozenValidation& fv, AlignEpochMetrics& m) {
    if (valid.empty()) return;
    const Tensor x_a = extract_features(s.student, pairs, valid, Modality::Weak, s.wl_stats);
    const auto l1 = head_logits(s.f1.net.forward(x_a));
    const auto l2 = head_logits(s.f2.net.forward(x_a));
    const Tensor z_a = s.disc.net.forward(x_a);
    const Tensor z_p = s.disc.net.forward(fv.x_p);
    std::size_t correct = 0;
    std::size_t satisfied = 0;
    std::size_t d_correct = 0;
    for (std::size_t i = 0; i < valid.size(); ++i) {
        if (softmax(l1[i]).argmax() == pairs[valid[i]].label) ++correct;
        const TripletTerms t = triplet_terms(softmax(l2[i]), fv.dist_p[i], fv.dist_n[i], s.options.triplet.order);
        if (t.kl_ap < t.kl_an) ++satisfied;
        if (z_p.data[i] > 0.0f) ++d_correct;
        if (!(z_a.data[i] > 0.0f)) ++d_correct;
    }
    const double nv = static_cast<double>(valid.size());
    m.val_acc = static_cast<double>(correct) / nv;
    m.triplet_sat_rate = static_cast<double>(satisfied) / nv;
    m.probe_d_acc = static_cast<double>(d_correct) / (2.0 * nv);
}

}  // namespace

AlignResult train_alignment(const std::vector<PixelPair>& pairs, const Split& split, const Checkpoint& teacher_ckpt,
                            const Checkpoint& unaligned_ckpt, const OptimizerConfig& cfg, const AlignOptions& options) {
    if (split.train.empty()) throw ConfigError("alignment: empty training split");
    AlignTrainState s = make_align_state(teacher_ckpt, unaligned_ckpt, cfg, options);
    const FrozenValidation fv = frozen_validation(s, pairs, split.valid);

    AlignResult result;
    AlignEpochMetrics init_metrics;
    validate_epoch(s, pairs, split.valid, fv, init_metrics);
    result.best_val_acc = init_metrics.val_acc;
    result.best_epoch = 0;
    result.best = to_checkpoint(s);

    std::vector<std::size_t> order = split.train;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_indices(order, s.rng);
        AlignEpochMetrics m;
        m.epoch = epoch;
        std::size_t batches = 0;
        for (std::size_t first = 0; first < order.size(); first += bs) {
            const std::size_t last = std::min(order.size(), first + bs);
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                               order.begin() + static_cast<std::ptrdiff_t>(last));
            const AlignBatch batch = make_align_batch(s, pairs, idx, true);
            LossReport r;
            try {
                r = align_step(s, batch);
            } catch (const TrainingError& e) {
                throw TrainingError("alignment epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) + ": " +
                                    e.what());
            }
            if (epoch == 1) result.first_epoch_steps.push_back(r);
            m.l_d += r.l_d;
            m.l_c += r.l_c;
            m.l_a += r.l_a;
            m.l_t += r.l_t;
            ++batches;
        }
        const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
        m.l_d /= nb;
        m.l_c /= nb;
        m.l_a /= nb;
        m.l_t /= nb;
        s.epoch = epoch;
        validate_epoch(s, pairs, split.valid, fv, m);
        result.log.push_back(m);
        if (m.val_acc > result.best_val_acc) {
            result.best_val_acc = m.val_acc;
            result.best_epoch = epoch;
            result.best = to_checkpoint(s);
        }
    }
    return result;
}

}  // namespace modalign
