#include "modalign/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "modalign/error.hpp"
#include "modalign/eval.hpp"
#include "modalign/synthgen.hpp"

namespace modalign {

namespace fs = std::filesystem;

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["manifest"] = manifest;
    j["out"] = out;
    j["teacher"] = teacher;
    j["unaligned"] = unaligned;
    j["student"] = student;
    j["extractor"] = extractor;
    j["learning_rate"] = learning_rate;
    j["weight_decay"] = weight_decay;
    j["beta1"] = beta1;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["n_pairs"] = n_pairs;
    j["image_side"] = image_side;
    j["class_prior"] = class_prior;
    j["gap_noise_sigma"] = gap_noise_sigma;
    j["gap_blur_radius"] = gap_blur_radius;
    j["gap_contrast"] = gap_contrast;
    j["weights"] = weights;
    j["margin"] = margin;
    j["kl_order"] = kl_order;
    j["student_init"] = student_init;
    j["augment"] = augment;
    j["k"] = k;
    j["fold"] = fold;
    j["folds"] = folds;
    j["jobs"] = jobs;
    j["n_images"] = n_images;
    j["warmup"] = warmup;
    j["viz_samples"] = viz_samples;
    return j;
}

namespace {

template <class T>
std::function<void(RunConfig&, const nlohmann::json&)> setter(T RunConfig::*member) {
    return [member](RunConfig& c, const nlohmann::json& v) { c.*member = v.get<T>(); };
}

const std::map<std::string, std::function<void(RunConfig&, const nlohmann::json&)>>& json_setters() {
    static const std::map<std::string, std::function<void(RunConfig&, const nlohmann::json&)>> m = {
        {"manifest", setter(&RunConfig::manifest)},
        {"out", setter(&RunConfig::out)},
        {"teacher", setter(&RunConfig::teacher)},
        {"unaligned", setter(&RunConfig::unaligned)},
        {"student", setter(&RunConfig::student)},
        {"extractor", setter(&RunConfig::extractor)},
        {"learning_rate", setter(&RunConfig::learning_rate)},
        {"weight_decay", setter(&RunConfig::weight_decay)},
        {"beta1", setter(&RunConfig::beta1)},
        {"epochs", setter(&RunConfig::epochs)},
        {"batch_size", setter(&RunConfig::batch_size)},
        {"seed", setter(&RunConfig::seed)},
        {"n_pairs", setter(&RunConfig::n_pairs)},
        {"image_side", setter(&RunConfig::image_side)},
        {"class_prior", setter(&RunConfig::class_prior)},
        {"gap_noise_sigma", setter(&RunConfig::gap_noise_sigma)},
        {"gap_blur_radius", setter(&RunConfig::gap_blur_radius)},
        {"gap_contrast", setter(&RunConfig::gap_contrast)},
        {"weights",
         [](RunConfig& c, const nlohmann::json& v) {
             c.weights = v.is_string() ? std::vector<std::string>{v.get<std::string>()}
                                       : v.get<std::vector<std::string>>();
         }},
        {"margin", setter(&RunConfig::margin)},
        {"kl_order", setter(&RunConfig::kl_order)},
        {"student_init", setter(&RunConfig::student_init)},
        {"augment", setter(&RunConfig::augment)},
        {"k", setter(&RunConfig::k)},
        {"fold", setter(&RunConfig::fold)},
        {"folds", setter(&RunConfig::folds)},
        {"jobs", setter(&RunConfig::jobs)},
        {"n_images", setter(&RunConfig::n_images)},
        {"warmup", setter(&RunConfig::warmup)},
        {"viz_samples", setter(&RunConfig::viz_samples)},
    };
    return m;
}

}  // namespace

void RunConfig::merge_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    const auto& setters = json_setters();
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto s = setters.find(it.key());
        if (s == setters.end()) throw ConfigError("unknown config key '" + it.key() + "'");
        try {
            s->second(*this, it.value());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config key '" + it.key() + "' has the wrong type");
        }
    }
}

RunConfig RunConfig::from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("config file " + path.string() + " is not valid JSON");
    }
    RunConfig c;
    c.merge_json(j);
    return c;
}

namespace {

struct OutDirs {
    fs::path root;
    fs::path checkpoints() const { return root / "checkpoints"; }
    fs::path logs() const { return root / "logs"; }
    fs::path reports() const { return root / "reports"; }
    fs::path viz() const { return root / "viz"; }
};

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::string or_default(const std::string& value, const fs::path& fallback) {
    return value.empty() ? fallback.string() : value;
}

OptimizerConfig optimizer(const RunConfig& c) {
    OptimizerConfig o;
    o.learning_rate = c.learning_rate;
    o.weight_decay = c.weight_decay;
    o.beta1 = c.beta1;
    o.epochs = c.epochs;
    o.batch_size = c.batch_size;
    o.seed = c.seed;
    o.validate();
    return o;
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) { return seed + 1000003ULL * static_cast<std::uint64_t>(fold); }

AugmentPolicy augment_policy(const RunConfig& c) { return c.augment ? AugmentPolicy{} : AugmentPolicy::identity(); }

AlignOptions align_options(const RunConfig& c) {
    AlignOptions o;
    if (c.weights.size() != 1) throw ConfigError("exactly one --weights triple is allowed here");
    o.weights = LossWeights::parse(c.weights.front());
    o.triplet.margin = c.margin;
    if (c.kl_order == "aligned-first") {
        o.triplet.order = KlOrder::AlignedFirst;
    } else if (c.kl_order == "aligned-second") {
        o.triplet.order = KlOrder::AlignedSecond;
    } else {
        throw ConfigError("kl_order must be aligned-first or aligned-second, got '" + c.kl_order + "'");
    }
    o.triplet.validate();
    o.augment = augment_policy(c);
    o.student_init = c.student_init;
    return o;
}

struct Dataset {
    Manifest manifest;
    std::vector<PixelPair> pairs;
    FoldPlan plan;
};

Dataset load_dataset(const RunConfig& c, const ExtractorConfig& ext) {
    if (c.manifest.empty()) throw ConfigError("--manifest is required");
    Dataset d;
    d.manifest = load_manifest(c.manifest);
    d.pairs = load_cropped_dataset(d.manifest, ext.in_side);
    d.plan = make_folds(d.manifest, c.k, c.seed);
    return d;
}

void check_fold(const RunConfig& c) {
    if (c.fold < 0 || c.fold >= c.k) {
        throw ConfigError("fold must lie in [0, " + std::to_string(c.k) + "), got " + std::to_string(c.fold));
    }
}

void stamp_fold(Checkpoint& ck, const RunConfig& c) {
    ck.config["fold"] = c.fold;
    ck.config["k"] = c.k;
    ck.config["fold_seed"] = c.seed;
}

void check_stamp(const Checkpoint& ck, const RunConfig& c, const std::string& what) {
    for (const char* key : {"fold", "k", "fold_seed"}) {
        if (!ck.config.contains(key)) continue;
        const auto got = ck.config[key].get<std::int64_t>();
        const std::int64_t want = std::string(key) == "fold" ? c.fold
                                  : std::string(key) == "k"  ? c.k
                                                             : static_cast<std::int64_t>(c.seed);
        if (got != want) {
            throw CompatibilityError(what + " was trained with " + key + " = " + std::to_string(got) +
                                     ", this run uses " + std::to_string(want));
        }
    }
}

int cmd_synth(const RunConfig& c) {
    SynthConfig s;
    s.n_pairs = c.n_pairs;
    s.image_side = c.image_side;
    s.class_prior = c.class_prior;
    s.gap_noise_sigma = c.gap_noise_sigma;
    s.gap_blur_radius = c.gap_blur_radius;
    s.gap_contrast = c.gap_contrast;
    s.seed = c.seed;
    const Manifest m = generate_dataset(s, c.out);
    std::printf("wrote %zu pairs to %s\n", m.records.size(), (fs::path(c.out) / "manifest.jsonl").string().c_str());
    return 0;
}

int cmd_pretrain(const RunConfig& c, Modality modality) {
    check_fold(c);
    const ExtractorConfig ext = ExtractorConfig::by_name(c.extractor);
    const Dataset d = load_dataset(c, ext);
    OptimizerConfig opt = optimizer(c);
    opt.seed = fold_seed(c.seed, c.fold);
    PretrainResult r = pretrain(modality, d.pairs, Split::from_fold(d.plan, c.fold), ext, opt, augment_policy(c));
    stamp_fold(r.checkpoint, c);

    const OutDirs out{c.out};
    const bool strong = modality == Modality::Strong;
    const std::string role = strong ? "teacher" : "unaligned";
    const fs::path ckpt = strong ? or_default(c.teacher, out.checkpoints() / "teacher.ckpt")
                                 : or_default(c.unaligned, out.checkpoints() / "unaligned.ckpt");
    fs::create_directories(ckpt.parent_path().empty() ? fs::path(".") : ckpt.parent_path());
    save_checkpoint(r.checkpoint, ckpt);
    write_text(out.logs() / ("pretrain_" + role + ".csv"), pretrain_log_csv(r.log));
    write_text(out.reports() / "folds.json", d.plan.to_json());
    std::printf("%s: best val acc %.4f at epoch %d -> %s\n", role.c_str(), r.best_val_acc, r.best_epoch,
                ckpt.string().c_str());
    return 0;
}

int cmd_align(const RunConfig& c) {
    check_fold(c);
    const OutDirs out{c.out};
    const Checkpoint teacher = load_checkpoint(or_default(c.teacher, out.checkpoints() / "teacher.ckpt"));
    const Checkpoint unaligned = load_checkpoint(or_default(c.unaligned, out.checkpoints() / "unaligned.ckpt"));
    check_stamp(teacher, c, "teacher checkpoint");
    check_stamp(unaligned, c, "unaligned checkpoint");
    const ExtractorConfig ext = extractor_config_from_json(teacher.config.at("extractor"));
    const Dataset d = load_dataset(c, ext);
    OptimizerConfig opt = optimizer(c);
    opt.seed = fold_seed(c.seed, c.fold);
    AlignResult r = train_alignment(d.pairs, Split::from_fold(d.plan, c.fold), teacher, unaligned, opt, align_options(c));
    stamp_fold(r.best, c);

    const fs::path ckpt = or_default(c.student, out.checkpoints() / "student.ckpt");
    fs::create_directories(ckpt.parent_path().empty() ? fs::path(".") : ckpt.parent_path());
    save_checkpoint(r.best, ckpt);
    write_text(out.logs() / "align_metrics.csv", align_metrics_csv(r.log));
    std::printf("student (%s): best val acc %.4f at epoch %d -> %s\n",
                r.best.config.at("method").get<std::string>().c_str(), r.best_val_acc, r.best_epoch,
                ckpt.string().c_str());
    return 0;
}

nlohmann::ordered_json fold_result_json(const FoldResult& r) {
    nlohmann::ordered_json j;
    j["fold"] = r.fold;
    j["n_valid"] = r.n_valid;
    j["accuracy"] = r.accuracy;
    j["recall"] = r.recall;
    j["confusion"] = r.confusion;
    return j;
}

int cmd_eval(const RunConfig& c) {
    check_fold(c);
    const OutDirs out{c.out};
    const Checkpoint ck = load_checkpoint(or_default(c.student, out.checkpoints() / "student.ckpt"));
    check_stamp(ck, c, "student checkpoint");
    const InferenceModel model = InferenceModel::from_checkpoint(ck);
    const Dataset d = load_dataset(c, model.config);
    std::vector<cv::Mat> weak;
    std::vector<int> labels;
    for (std::size_t i : d.plan.valid_indices(c.fold)) {
        weak.push_back(d.pairs[i].wl);
        labels.push_back(d.pairs[i].label);
    }
    const FoldResult r = accuracy(predict(model, weak, c.batch_size).classes, labels, c.fold);
    nlohmann::ordered_json j;
    j["method"] = ck.config.value("method", std::string("?"));
    j["backbone"] = model.config.name;
    const auto fr = fold_result_json(r);
    for (auto it = fr.begin(); it != fr.end(); ++it) j[it.key()] = it.value();
    write_text(out.reports() / "eval.json", j.dump(2) + "\n");
    std::printf("fold %d: accuracy %.4f on %d pairs\n", r.fold, r.accuracy, r.n_valid);
    return 0;
}

std::string variant_slug(const LossWeights& w) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "w%g_%g_%g", w.c, w.a, w.t);
    return buf;
}

int cmd_cv(const RunConfig& c) {
    const ExtractorConfig ext = ExtractorConfig::by_name(c.extractor);
    const Dataset d = load_dataset(c, ext);
    if (c.jobs < 1) throw ConfigError("jobs must be at least 1");

    std::vector<LossWeights> variants;
    for (const auto& w : c.weights) variants.push_back(LossWeights::parse(w));
    RunConfig one = c;
    one.weights = {c.weights.front()};

    PipelineConfig p;
    p.extractor = ext;
    p.opt = optimizer(c);
    p.augment = augment_policy(c);
    p.align = align_options(one);
    p.measure_speed = false;  // timed below, after training, on an idle core
    p.speed_images = c.n_images;
    p.speed_warmup = c.warmup;
    std::vector<int> folds = c.folds;
    if (folds.empty()) {
        for (int f = 0; f < c.k; ++f) folds.push_back(f);
    }
    for (int f : folds) {
        if (f < 0 || f >= c.k) throw ConfigError("fold " + std::to_string(f) + " is out of range");
    }

    std::vector<FoldRun> runs(folds.size());
    if (c.jobs == 1) {
        p.folds = folds;
        CvOutcome o = cross_validate_variants(d.pairs, d.plan, p, variants);
        runs = std::move(o.folds);
    } else {
        std::atomic<std::size_t> next{0};
        std::mutex err_mu;
        std::exception_ptr err;
        auto worker = [&] {
            for (std::size_t i = next++; i < folds.size(); i = next++) {
                try {
                    PipelineConfig pf = p;
                    pf.folds = {folds[i]};
                    runs[i] = std::move(cross_validate_variants(d.pairs, d.plan, pf, variants).folds.front());
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!err) err = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        const int n_threads = std::min<int>(c.jobs, static_cast<int>(folds.size()));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        if (err) std::rethrow_exception(err);
    }

    // Reports are rebuilt from the fold runs so both paths share one layout.
    std::vector<Report> reports(variants.size());
    for (std::size_t v = 0; v < variants.size(); ++v) {
        reports[v].method = variants[v].method_label();
        reports[v].backbone = ext.name;
        reports[v].hardware = hardware_description();
        std::vector<double> speeds;
        for (const auto& run : runs) {
            reports[v].folds.push_back(run.variants[v].result.accuracy);
            const InferenceModel model = InferenceModel::from_checkpoint(run.variants[v].align.best);
            speeds.push_back(timing_benchmark(model, c.n_images, c.warmup).mean_ms);
        }
        reports[v].mean = mean_accuracy(reports[v].folds);
        reports[v].speed_ms = mean_accuracy(speeds);
    }

    const OutDirs out{c.out};
    nlohmann::ordered_json j;
    j["k"] = c.k;
    j["seed"] = c.seed;
    j["reports"] = nlohmann::ordered_json::array();
    for (const auto& r : reports) j["reports"].push_back(nlohmann::ordered_json::parse(r.to_json()));
    j["folds"] = nlohmann::ordered_json::array();
    for (const auto& run : runs) {
        nlohmann::ordered_json f;
        f["fold"] = run.fold;
        f["teacher_acc"] = run.teacher_acc;
        f["unaligned_acc"] = run.unaligned_acc;
        f["variants"] = nlohmann::ordered_json::array();
        for (std::size_t v = 0; v < variants.size(); ++v) {
            auto vr = fold_result_json(run.variants[v].result);
            vr["method"] = variants[v].method_label();
            vr["best_epoch"] = run.variants[v].align.best_epoch;
            f["variants"].push_back(vr);
            write_text(out.logs() / ("cv_fold" + std::to_string(run.fold) + "_" + variant_slug(variants[v]) + ".csv"),
                       align_metrics_csv(run.variants[v].align.log));
        }
        j["folds"].push_back(f);
        write_text(out.logs() / ("cv_fold" + std::to_string(run.fold) + "_pretrain_teacher.csv"),
                   pretrain_log_csv(run.teacher.log));
        write_text(out.logs() / ("cv_fold" + std::to_string(run.fold) + "_pretrain_unaligned.csv"),
                   pretrain_log_csv(run.unaligned.log));
    }
    const std::string table = format_table(reports);
    write_text(out.reports() / "cv_table.txt", table);
    write_text(out.reports() / "cv_report.json", j.dump(2) + "\n");
    write_text(out.reports() / "folds.json", d.plan.to_json());
    std::printf("%s", table.c_str());
    return 0;
}

int cmd_viz(const RunConfig& c) {
    check_fold(c);
    if (c.viz_samples < 1) throw ConfigError("viz_samples must be at least 1");
    const OutDirs out{c.out};
    const Checkpoint ck = load_checkpoint(or_default(c.student, out.checkpoints() / "student.ckpt"));
    check_stamp(ck, c, "student checkpoint");
    const ExtractorConfig ext = extractor_config_from_json(ck.config.at("extractor"));
    const ChannelStats wl = channel_stats_from_json(ck.config.at("wl_stats"));
    const ChannelStats nbi = channel_stats_from_json(ck.config.at("nbi_stats"));
    Extractor teacher(ext), unaligned(ext), student(ext);
    ck.get("teacher", teacher.net);
    ck.get("unaligned", unaligned.net);
    ck.get("student", student.net);

    const Dataset d = load_dataset(c, ext);
    std::vector<std::size_t> idx = d.plan.valid_indices(c.fold);
    if (idx.size() > static_cast<std::size_t>(c.viz_samples)) idx.resize(static_cast<std::size_t>(c.viz_samples));

    std::vector<HeatmapRow> rows{{"input", {}}, {"weak", {}}, {"aligned", {}}, {"strong", {}}};
    for (std::size_t i : idx) {
        const PixelPair& p = d.pairs[i];
        const FeatureMap fn = extractor_forward_one(unaligned, images_to_batch({p.wl}, wl), FeatureTag::Negative);
        const FeatureMap fa = extractor_forward_one(student, images_to_batch({p.wl}, wl), FeatureTag::Aligned);
        const FeatureMap fp = extractor_forward_one(teacher, images_to_batch({p.nbi}, nbi), FeatureTag::Positive);
        rows[0].tiles.push_back(p.wl);
        rows[1].tiles.push_back(render_heatmap(fn, p.wl));
        rows[2].tiles.push_back(render_heatmap(fa, p.wl));
        rows[3].tiles.push_back(render_heatmap(fp, p.nbi));
        export_feature_heatmap(fn, p.wl, out.viz() / (p.pair_id + "_weak.png"));
        export_feature_heatmap(fa, p.wl, out.viz() / (p.pair_id + "_aligned.png"));
        export_feature_heatmap(fp, p.nbi, out.viz() / (p.pair_id + "_strong.png"));
    }
    export_heatmap_grid(rows, out.viz() / "heatmap_grid.png");
    std::printf("wrote %zu heatmap columns to %s\n", idx.size(), out.viz().string().c_str());
    return 0;
}

int cmd_bench(const RunConfig& c) {
    const OutDirs out{c.out};
    const Checkpoint ck = load_checkpoint(or_default(c.student, out.checkpoints() / "student.ckpt"));
    const InferenceModel model = InferenceModel::from_checkpoint(ck);
    const Timing t = timing_benchmark(model, c.n_images, c.warmup);
    nlohmann::ordered_json j;
    j["backbone"] = model.config.name;
    j["n_images"] = t.n_images;
    j["warmup"] = c.warmup;
    j["mean_ms"] = t.mean_ms;
    j["median_ms"] = t.median_ms;
    j["hardware"] = hardware_description();
    write_text(out.reports() / "bench.json", j.dump(2) + "\n");
    std::printf("%.3f ms/image mean, %.3f ms median over %d images\n", t.mean_ms, t.median_ms, t.n_images);
    return 0;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

// Flags are parsed into a scratch config; only the ones actually given
// are copied over the defaults + config-file layer.
class Binder {
public:
    explicit Binder(CLI::App* app) : app_(app) {}
    Binder(const Binder&) = delete;
    Binder& operator=(const Binder&) = delete;

    template <class T>
    Binder& opt(const std::string& flag, T RunConfig::*member, const std::string& help) {
        CLI::Option* o = app_->add_option(flag, scratch_.*member, help)->capture_default_str();
        copies_.push_back({o, [member](RunConfig& dst, const RunConfig& src) { dst.*member = src.*member; }});
        return *this;
    }

    Binder& list(const std::string& flag, std::vector<std::string> RunConfig::*member, const std::string& help) {
        CLI::Option* o = app_->add_option(flag, scratch_.*member, help)->capture_default_str()->delimiter(';');
        copies_.push_back({o, [member](RunConfig& dst, const RunConfig& src) { dst.*member = src.*member; }});
        return *this;
    }

    Binder& ints(const std::string& flag, std::vector<int> RunConfig::*member, const std::string& help) {
        CLI::Option* o = app_->add_option(flag, scratch_.*member, help)->delimiter(',');
        copies_.push_back({o, [member](RunConfig& dst, const RunConfig& src) { dst.*member = src.*member; }});
        return *this;
    }

    Binder& no_augment() {
        CLI::Option* o = app_->add_flag("--no-augment", "Disable flip/rotation augmentation (default: enabled)");
        copies_.push_back({o, [](RunConfig& dst, const RunConfig&) { dst.augment = false; }});
        return *this;
    }

    Binder& config_file() {
        app_->add_option("--config", config_path_, "JSON run config; flags override its values")
            ->check(CLI::ExistingFile);
        return *this;
    }

    CLI::App* app() const { return app_; }

    RunConfig resolve() const {
        RunConfig c;
        if (!config_path_.empty()) c = RunConfig::from_file(config_path_);
        for (const auto& [o, copy] : copies_) {
            if (o->count() > 0) copy(c, scratch_);
        }
        return c;
    }

private:
    CLI::App* app_;
    RunConfig scratch_;
    std::string config_path_;
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, const RunConfig&)>>> copies_;
};

void add_paths(Binder& b, bool with_manifest) {
    if (with_manifest) b.opt("--manifest", &RunConfig::manifest, "Manifest (manifest.jsonl)");
    b.opt("--out", &RunConfig::out, "Output directory");
}

void add_optimizer(Binder& b) {
    b.opt("--extractor", &RunConfig::extractor, "Extractor config: tiny or resnet50-like")
        .opt("--learning-rate", &RunConfig::learning_rate, "Adam learning rate")
        .opt("--weight-decay", &RunConfig::weight_decay, "Weight decay")
        .opt("--beta1", &RunConfig::beta1, "Adam first-moment decay")
        .opt("--epochs", &RunConfig::epochs, "Epochs per training phase")
        .opt("--batch-size", &RunConfig::batch_size, "Mini-batch size")
        .no_augment();
}

void add_folds(Binder& b) {
    b.opt("--seed", &RunConfig::seed, "Seed for folds and training")
        .opt("--k", &RunConfig::k, "Number of folds")
        .opt("--fold", &RunConfig::fold, "Held-out fold index");
}

void add_alignment(Binder& b) {
    b.list("--weights", &RunConfig::weights, "Loss weights w_c,w_a,w_t (cv accepts several, ';'-separated)")
        .opt("--margin", &RunConfig::margin, "Triplet margin")
        .opt("--kl-order", &RunConfig::kl_order, "aligned-first or aligned-second")
        .opt("--student-init", &RunConfig::student_init, "Student init: random, unaligned or teacher");
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Teacher-student modality alignment for paired weak/strong images", "modalign"};
    app.require_subcommand(1);

    // Binders own the scratch storage CLI11 writes into, so they must not move.
    std::vector<std::pair<std::string, std::unique_ptr<Binder>>> cmds;
    auto sub = [&](const std::string& name, const std::string& help) -> Binder& {
        cmds.emplace_back(name, std::make_unique<Binder>(app.add_subcommand(name, help)));
        return cmds.back().second->config_file();
    };

    {
        Binder& b = sub("synth", "Generate a synthetic paired dataset under --out");
        b.opt("--out", &RunConfig::out, "Dataset directory")
            .opt("--seed", &RunConfig::seed, "Generator seed")
            .opt("--n-pairs", &RunConfig::n_pairs, "Number of pairs")
            .opt("--image-side", &RunConfig::image_side, "Square image side in pixels")
            .opt("--class-prior", &RunConfig::class_prior, "P(label = 1)")
            .opt("--gap-noise-sigma", &RunConfig::gap_noise_sigma, "Weak-modality Gaussian noise std")
            .opt("--gap-blur-radius", &RunConfig::gap_blur_radius, "Weak-modality box blur radius")
            .opt("--gap-contrast", &RunConfig::gap_contrast, "Weak-modality contrast factor (1 = unchanged)");
    }
    for (const char* name : {"pretrain-teacher", "pretrain-unaligned"}) {
        const bool strong = std::string(name) == "pretrain-teacher";
        Binder& b = sub(name, strong ? "Pretrain the teacher extractor and F2 on the strong modality"
                                     : "Pretrain the unaligned extractor on the weak modality");
        add_paths(b, true);
        if (strong) {
            b.opt("--teacher", &RunConfig::teacher, "Checkpoint path (default <out>/checkpoints/teacher.ckpt)");
        } else {
            b.opt("--unaligned", &RunConfig::unaligned, "Checkpoint path (default <out>/checkpoints/unaligned.ckpt)");
        }
        add_optimizer(b);
        add_folds(b);
    }
    {
        Binder& b = sub("align", "Train student, F1 and D against the frozen teacher");
        add_paths(b, true);
        b.opt("--teacher", &RunConfig::teacher, "Teacher checkpoint (default <out>/checkpoints/teacher.ckpt)")
            .opt("--unaligned", &RunConfig::unaligned,
                 "Unaligned checkpoint (default <out>/checkpoints/unaligned.ckpt)")
            .opt("--student", &RunConfig::student, "Output checkpoint (default <out>/checkpoints/student.ckpt)");
        add_optimizer(b);
        add_folds(b);
        add_alignment(b);
    }
    {
        Binder& b = sub("eval", "Evaluate a student checkpoint on the held-out fold");
        add_paths(b, true);
        b.opt("--student", &RunConfig::student, "Student checkpoint (default <out>/checkpoints/student.ckpt)")
            .opt("--batch-size", &RunConfig::batch_size, "Inference batch size");
        add_folds(b);
    }
    {
        Binder& b = sub("cv", "k-fold cross-validation of one or more loss-weight variants");
        add_paths(b, true);
        add_optimizer(b);
        b.opt("--seed", &RunConfig::seed, "Seed for folds and training").opt("--k", &RunConfig::k, "Number of folds");
        b.ints("--folds", &RunConfig::folds, "Comma-separated folds to run (default: all)")
            .opt("--jobs", &RunConfig::jobs, "Folds trained in parallel")
            .opt("--n-images", &RunConfig::n_images, "Images for the per-variant speed measurement")
            .opt("--warmup", &RunConfig::warmup, "Warm-up passes before timing");
        add_alignment(b);
    }
    {
        Binder& b = sub("viz", "Export feature heatmaps for held-out pairs");
        add_paths(b, true);
        b.opt("--student", &RunConfig::student, "Student checkpoint (default <out>/checkpoints/student.ckpt)")
            .opt("--viz-samples", &RunConfig::viz_samples, "Number of held-out pairs to render");
        add_folds(b);
    }
    {
        Binder& b = sub("bench", "Batch-1 inference latency of a student checkpoint");
        add_paths(b, false);
        b.opt("--student", &RunConfig::student, "Student checkpoint (default <out>/checkpoints/student.ckpt)")
            .opt("--n-images", &RunConfig::n_images, "Timed images (at least 30)")
            .opt("--warmup", &RunConfig::warmup, "Warm-up passes before timing");
    }

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e);
            return 0;
        }
        std::fprintf(stderr, "error: usage: %s\n", one_line(e.what()).c_str());
        return 2;
    }

    try {
        for (const auto& [name, binder] : cmds) {
            if (!binder->app()->parsed()) continue;
            const RunConfig c = binder->resolve();
            if (name == "synth") return cmd_synth(c);
            if (name == "pretrain-teacher") return cmd_pretrain(c, Modality::Strong);
            if (name == "pretrain-unaligned") return cmd_pretrain(c, Modality::Weak);
            if (name == "align") return cmd_align(c);
            if (name == "eval") return cmd_eval(c);
            if (name == "cv") return cmd_cv(c);
            if (name == "viz") return cmd_viz(c);
            if (name == "bench") return cmd_bench(c);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), one_line(e.what()).c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", one_line(e.what()).c_str());
        return 1;
    }
    return 2;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args);
}

}  // namespace modalign
