#include "modalign/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "modalign/error.hpp"

namespace modalign {

namespace fs = std::filesystem;

InferenceModel::InferenceModel(const ExtractorConfig& cfg)
    : config(cfg), student(cfg), f1(HeadRole::F1, cfg.out_channels) {}

InferenceModel InferenceModel::from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.config.contains("extractor")) throw CompatibilityError("checkpoint has no extractor config");
    if (!ckpt.has("student")) throw CompatibilityError("checkpoint has no student extractor");
    if (!ckpt.has("F1")) throw CompatibilityError("checkpoint has no F1 head");
    if (!ckpt.config.contains("wl_stats")) throw CompatibilityError("checkpoint has no weak-modality statistics");
    InferenceModel m(extractor_config_from_json(ckpt.config["extractor"]));
    ckpt.get("student", m.student.net);
    ckpt.get("F1", m.f1.net);
    m.wl_stats = channel_stats_from_json(ckpt.config["wl_stats"]);
    return m;
}

Prediction predict(const InferenceModel& model, const std::vector<cv::Mat>& weak_images, int batch_size) {
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    Prediction out;
    for (std::size_t first = 0; first < weak_images.size(); first += static_cast<std::size_t>(batch_size)) {
        const std::size_t last = std::min(weak_images.size(), first + static_cast<std::size_t>(batch_size));
        const std::vector<cv::Mat> chunk(weak_images.begin() + static_cast<std::ptrdiff_t>(first),
                                         weak_images.begin() + static_cast<std::ptrdiff_t>(last));
        const Tensor feats = extractor_forward(model.student, images_to_batch(chunk, model.wl_stats));
        for (const auto& l : head_logits(model.f1.net.forward(feats))) {
            const ClassDistribution d = softmax(l);
            out.classes.push_back(d.argmax());
            out.distributions.push_back(d);
        }
    }
    return out;
}

FoldResult accuracy(const std::vector<int>& preds, const std::vector<int>& labels, int fold) {
    if (preds.size() != labels.size()) {
        throw ContractError("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(labels.size()) + " labels");
    }
    if (preds.empty()) throw ContractError("accuracy: empty input");
    FoldResult r;
    r.fold = fold;
    r.n_valid = static_cast<int>(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] > 1 || labels[i] < 0 || labels[i] > 1) {
            throw ContractError("accuracy: class index outside {0,1}");
        }
        ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
    }
    r.accuracy = static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) / r.n_valid;
    for (std::size_t c = 0; c < 2; ++c) {
        const int total = r.confusion[c][0] + r.confusion[c][1];
        r.recall[c] = total > 0 ? static_cast<double>(r.confusion[c][c]) / total : 0.0;
    }
    return r;
}

double mean_accuracy(const std::vector<double>& folds) {
    if (folds.empty()) return 0.0;
    return std::accumulate(folds.begin(), folds.end(), 0.0) / static_cast<double>(folds.size());
}

std::string Report::to_json() const {
    nlohmann::ordered_json j;
    j["method"] = method;
    j["backbone"] = backbone;
    j["folds"] = folds;
    j["mean"] = mean;
    j["speed_ms"] = speed_ms;
    j["hardware"] = hardware;
    return j.dump(2) + "\n";
}

std::string format_table(const std::vector<Report>& reports) {
    std::size_t n_folds = 0;
    for (const auto& r : reports) n_folds = std::max(n_folds, r.folds.size());
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-12s %-14s %-11s", "Method", "Backbone", "Speed");
    os << buf;
    for (std::size_t f = 0; f < n_folds; ++f) {
        std::snprintf(buf, sizeof(buf), " %8s", ("FOLD" + std::to_string(f + 1)).c_str());
        os << buf;
    }
    os << " " << std::string(8 - 4, ' ') << "Mean\n";
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof(buf), "%-12s %-14s %8.2f ms", r.method.c_str(), r.backbone.c_str(), r.speed_ms);
        os << buf;
        for (std::size_t f = 0; f < n_folds; ++f) {
            if (f < r.folds.size()) {
                std::snprintf(buf, sizeof(buf), " %7.1f%%", 100.0 * r.folds[f]);
            } else {
                std::snprintf(buf, sizeof(buf), " %8s", "-");
            }
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), " %7.1f%%\n", 100.0 * r.mean);
        os << buf;
    }
    return os.str();
}

std::string hardware_description() {
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) return "CPU " + line.substr(colon + 2) + ", batch 1, single thread";
        }
    }
    return "CPU, batch 1, single thread";
}

double train_probe(const ExtractorConfig& cfg, const Tensor& real_train, const Tensor& fake_train,
                   const Tensor& real_valid, const Tensor& fake_valid, const ProbeConfig& probe) {
    if (real_train.n == 0 || fake_train.n == 0) throw ConfigError("probe: empty training features");
    if (real_valid.n == 0 || fake_valid.n == 0) throw ConfigError("probe: empty validation features");
    std::mt19937_64 rng(probe.seed ^ 0x70726f6265ULL);
    Discriminator d(cfg, rng);
    OptimizerConfig oc;
    oc.learning_rate = probe.learning_rate;
    Adam opt(d.net, oc);

    const Tensor x = Tensor::concat(real_train, fake_train);
    std::vector<int> labels(static_cast<std::size_t>(x.n), 0);
    std::fill(labels.begin(), labels.begin() + real_train.n, 1);
    std::vector<int> order(static_cast<std::size_t>(x.n));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < probe.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(probe.batch_size)) {
            const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(probe.batch_size));
            const int n = static_cast<int>(last - first);
            Tensor xb(n, x.c, x.h, x.w);
            for (int k = 0; k < n; ++k) {
                std::copy(x.sample(order[first + k]), x.sample(order[first + k]) + x.sample_size(), xb.sample(k));
            }
            Tape tape;
            const Tensor z = d.net.forward(xb, &tape);
            Tensor g(n, 1, 1, 1);
            for (int k = 0; k < n; ++k) {
                g.data[static_cast<std::size_t>(k)] = static_cast<float>(
                    bce_logit_grad(z.data[static_cast<std::size_t>(k)], labels[static_cast<std::size_t>(order[first + k])]) / n);
            }
            Gradients grads = d.net.make_gradients();
            d.net.backward(g, tape, &grads);
            opt.step(d.net, grads);
        }
    }
    const Tensor zr = d.net.forward(real_valid);
    const Tensor zf = d.net.forward(fake_valid);
    std::size_t correct = 0;
    for (float v : zr.data) correct += v > 0.0f ? 1 : 0;
    for (float v : zf.data) correct += v > 0.0f ? 0 : 1;
    return static_cast<double>(correct) / static_cast<double>(zr.n + zf.n);
}

cv::Mat heatmap_values(const FeatureMap& feat, cv::Size size) {
    if (feat.c <= 0 || feat.h <= 0 || feat.w <= 0 ||
        feat.values.size() != static_cast<std::size_t>(feat.c) * feat.h * feat.w) {
        throw ShapeError("invalid feature map");
    }
    cv::Mat mean(feat.h, feat.w, CV_32F, cv::Scalar(0));
    const int plane = feat.h * feat.w;
    for (int y = 0; y < feat.h; ++y) {
        for (int x = 0; x < feat.w; ++x) {
            double acc = 0.0;
            for (int ch = 0; ch < feat.c; ++ch) acc += feat.values[static_cast<std::size_t>(ch * plane + y * feat.w + x)];
            mean.at<float>(y, x) = static_cast<float>(acc / feat.c);
        }
    }
    double lo = 0.0;
    double hi = 0.0;
    cv::minMaxLoc(mean, &lo, &hi);
    cv::Mat norm;
    if (hi - lo <= 0.0) {
        norm = cv::Mat(feat.h, feat.w, CV_32F, cv::Scalar(0.5));
    } else {
        norm = (mean - lo) / (hi - lo);
    }
    cv::Mat out;
    cv::resize(norm, out, size, 0.0, 0.0, cv::INTER_LINEAR);
    return out;
}

cv::Mat render_heatmap(const FeatureMap& feat, const cv::Mat& base_image) {
    if (base_image.empty() || base_image.type() != CV_8UC3) throw ShapeError("heatmap base image must be 8-bit RGB");
    const cv::Mat values = heatmap_values(feat, base_image.size());
    cv::Mat gray;
    values.convertTo(gray, CV_8U, 255.0);
    cv::Mat bgr;
    cv::applyColorMap(gray, bgr, cv::COLORMAP_JET);
    cv::Mat colored;
    cv::cvtColor(bgr, colored, cv::COLOR_BGR2RGB);
    cv::Mat blended;
    cv::addWeighted(colored, 0.6, base_image, 0.4, 0.0, blended);
    return blended;
}

void write_rgb_image(const cv::Mat& rgb, const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), bgr);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) throw IoError("cannot write " + path.string());
}

void export_feature_heatmap(const FeatureMap& feat, const cv::Mat& base_image, const fs::path& out_path) {
    write_rgb_image(render_heatmap(feat, base_image), out_path);
}

void export_heatmap_grid(const std::vector<HeatmapRow>& rows, const fs::path& out_path) {
    if (rows.empty() || rows.front().tiles.empty()) throw ContractError("heatmap grid needs at least one tile");
    const cv::Size tile = rows.front().tiles.front().size();
    std::size_t cols = 0;
    for (const auto& r : rows) cols = std::max(cols, r.tiles.size());
    constexpr int kGap = 2;
    cv::Mat canvas(static_cast<int>(rows.size()) * (tile.height + kGap),
                   static_cast<int>(cols) * (tile.width + kGap), CV_8UC3, cv::Scalar(255, 255, 255));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].tiles.size(); ++c) {
            const cv::Mat& t = rows[r].tiles[c];
            if (t.size() != tile || t.type() != CV_8UC3) throw ShapeError("heatmap grid tiles differ in size");
            t.copyTo(canvas(cv::Rect(static_cast<int>(c) * (tile.width + kGap), static_cast<int>(r) * (tile.height + kGap),
                                     tile.width, tile.height)));
        }
    }
    write_rgb_image(canvas, out_path);
}

AlignmentEvidence alignment_evidence(const std::vector<PixelPair>& pairs, const Split& split,
                                     const Checkpoint& ckpt, const ProbeConfig& probe) {
    const ExtractorConfig cfg = extractor_config_from_json(ckpt.config.at("extractor"));
    const ChannelStats wl = channel_stats_from_json(ckpt.config.at("wl_stats"));
    const ChannelStats nbi = channel_stats_from_json(ckpt.config.at("nbi_stats"));
    Extractor teacher(cfg);
    Extractor unaligned(cfg);
    Extractor student(cfg);
    ckpt.get("teacher", teacher.net);
    ckpt.get("unaligned", unaligned.net);
    ckpt.get("student", student.net);

    auto features = [&](const Extractor& ex, const std::vector<std::size_t>& idx, Modality m, const ChannelStats& s) {
        return extract_features(ex, pairs, idx, m, s);
    };
    const Tensor p_tr = features(teacher, split.train, Modality::Strong, nbi);
    const Tensor p_va = features(teacher, split.valid, Modality::Strong, nbi);
    const Tensor n_tr = features(unaligned, split.train, Modality::Weak, wl);
    const Tensor n_va = features(unaligned, split.valid, Modality::Weak, wl);
    const Tensor a_tr = features(student, split.train, Modality::Weak, wl);
    const Tensor a_va = features(student, split.valid, Modality::Weak, wl);

    AlignmentEvidence ev;
    ev.probe_unaligned_acc = train_probe(cfg, p_tr, n_tr, p_va, n_va, probe);
    ev.probe_aligned_acc = train_probe(cfg, p_tr, a_tr, p_va, a_va, probe);

    const cv::Size size(cfg.in_side, cfg.in_side);
    double da = 0.0;
    double dn = 0.0;
    for (int i = 0; i < p_va.n; ++i) {
        const cv::Mat hp = heatmap_values(FeatureMap::from_batch(p_va, i, FeatureTag::Positive), size);
        const cv::Mat hn = heatmap_values(FeatureMap::from_batch(n_va, i, FeatureTag::Negative), size);
        const cv::Mat ha = heatmap_values(FeatureMap::from_batch(a_va, i, FeatureTag::Aligned), size);
        da += cv::mean(cv::abs(ha - hp))[0];
        dn += cv::mean(cv::abs(hn - hp))[0];
    }
    if (p_va.n > 0) {
        ev.heatmap_aligned = da / p_va.n;
        ev.heatmap_unaligned = dn / p_va.n;
    }
    return ev;
}

Timing timing_benchmark(const InferenceModel& model, int n_images, int warmup, int input_side) {
    if (n_images < 30) throw ContractError("timing_benchmark needs at least 30 images");
    const int side = input_side > 0 ? input_side : model.config.in_side;
    std::mt19937_64 rng(0x62656e6368ULL);
    std::uniform_int_distribution<int> byte(0, 255);
    auto random_image = [&] {
        cv::Mat img(side, side, CV_8UC3);
        for (int y = 0; y < side; ++y) {
            auto* row = img.ptr<cv::Vec3b>(y);
            for (int x = 0; x < side; ++x) {
                for (int c = 0; c < 3; ++c) row[x][c] = static_cast<unsigned char>(byte(rng));
            }
        }
        return img;
    };
    auto run_one = [&](const cv::Mat& img) {
        if (side == model.config.in_side) {
            return predict(model, {img}, 1).classes.front();
        }
        // Off-contract side: same layers, no shape contract.
        const Tensor feats = model.student.net.forward(images_to_batch({img}, model.wl_stats));
        return softmax(head_logits(model.f1.net.forward(feats)).front()).argmax();
    };
    std::vector<cv::Mat> images;
    for (int i = 0; i < n_images + warmup; ++i) images.push_back(random_image());
    volatile int sink = 0;
    for (int i = 0; i < warmup; ++i) sink = sink + run_one(images[static_cast<std::size_t>(i)]);
    std::vector<double> ms;
    for (int i = 0; i < n_images; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        sink = sink + run_one(images[static_cast<std::size_t>(warmup + i)]);
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    Timing t;
    t.n_images = n_images;
    t.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    std::sort(ms.begin(), ms.end());
    const std::size_t mid = ms.size() / 2;
    t.median_ms = ms.size() % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
    return t;
}

CvOutcome cross_validate_variants(const std::vector<PixelPair>& pairs, const FoldPlan& plan,
                                  const PipelineConfig& cfg, const std::vector<LossWeights>& variants,
                                  const FoldCallback& on_fold) {
    if (variants.empty()) throw ConfigError("cross-validation needs at least one loss-weight variant");
    if (plan.assignments.size() != pairs.size()) throw ContractError("fold plan does not match the dataset");
    std::vector<int> folds = cfg.folds;
    if (folds.empty()) {
        for (int f = 0; f < plan.k; ++f) folds.push_back(f);
    }

    CvOutcome out;
    out.reports.resize(variants.size());
    std::vector<std::vector<double>> speeds(variants.size());
    for (std::size_t v = 0; v < variants.size(); ++v) {
        out.reports[v].method = variants[v].method_label();
        out.reports[v].backbone = cfg.extractor.name;
        out.reports[v].hardware = hardware_description();
    }

    for (int fold : folds) {
        const Split split = Split::from_fold(plan, fold);
        OptimizerConfig opt = cfg.opt;
        opt.seed = cfg.opt.seed + 1000003ULL * static_cast<std::uint64_t>(fold);

        FoldRun run;
        run.fold = fold;
        run.teacher = pretrain(Modality::Strong, pairs, split, cfg.extractor, opt, cfg.augment);
        run.unaligned = pretrain(Modality::Weak, pairs, split, cfg.extractor, opt, cfg.augment);
        run.teacher_acc = run.teacher.best_val_acc;
        run.unaligned_acc = run.unaligned.best_val_acc;

        std::vector<cv::Mat> weak;
        std::vector<int> labels;
        for (std::size_t i : split.valid) {
            weak.push_back(pairs[i].wl);
            labels.push_back(pairs[i].label);
        }
        for (std::size_t v = 0; v < variants.size(); ++v) {
            AlignOptions options = cfg.align;
            options.weights = variants[v];
            options.augment = cfg.augment;
            VariantFold vf;
            vf.align = train_alignment(pairs, split, run.teacher.checkpoint, run.unaligned.checkpoint, opt, options);
            const InferenceModel model = InferenceModel::from_checkpoint(vf.align.best);
            vf.result = accuracy(predict(model, weak).classes, labels, fold);
            if (cfg.collect_evidence) {
                ProbeConfig probe = cfg.probe;
                probe.seed = opt.seed;
                vf.evidence = alignment_evidence(pairs, split, vf.align.best, probe);
            }
            if (cfg.measure_speed) {
                speeds[v].push_back(timing_benchmark(model, cfg.speed_images, cfg.speed_warmup).mean_ms);
            }
            out.reports[v].folds.push_back(vf.result.accuracy);
            run.variants.push_back(std::move(vf));
        }
        if (on_fold) on_fold(run);
        out.folds.push_back(std::move(run));
    }
    for (std::size_t v = 0; v < variants.size(); ++v) {
        out.reports[v].mean = mean_accuracy(out.reports[v].folds);
        out.reports[v].speed_ms = mean_accuracy(speeds[v]);
    }
    return out;
}

Report cross_validate(const Manifest& manifest, int k, std::uint64_t seed, const PipelineConfig& cfg) {
    const FoldPlan plan = make_folds(manifest, k, seed);
    const std::vector<PixelPair> pairs = load_cropped_dataset(manifest, cfg.extractor.in_side);
    return cross_validate_variants(pairs, plan, cfg, {cfg.align.weights}).reports.front();
}

}  // namespace modalign
