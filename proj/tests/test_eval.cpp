#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "modalign/error.hpp"
#include "modalign/eval.hpp"
#include "support/fixtures.hpp"
#include "support/student.hpp"

using namespace modalign;

namespace {

void scramble(Checkpoint& ck, const std::string& prefix, float value) {
    for (auto& [name, blob] : ck.blobs) {
        if (name.rfind(prefix + "/", 0) == 0) std::fill(blob.begin(), blob.end(), value);
    }
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("predictions use only the student and F1") {
    const Checkpoint ck = small_run::student_checkpoint();
    auto [images, labels] = small_run::valid_weak();
    const Prediction base = predict(InferenceModel::from_checkpoint(ck), images);

    Checkpoint noisy = ck;
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n(0, 5);
    for (const char* prefix : {"teacher", "unaligned", "F2", "D"}) {
        for (auto& [name, blob] : noisy.blobs)
            if (name.rfind(std::string(prefix) + "/", 0) == 0)
                for (auto& v : blob) v += n(rng);
    }
    Checkpoint poisoned = ck;
    for (const char* prefix : {"teacher", "unaligned", "F2", "D"}) scramble(poisoned, prefix, NAN);
    Checkpoint stripped = ck;
    for (const char* prefix : {"teacher", "unaligned", "F2", "D"}) stripped.erase(prefix);

    for (const Checkpoint* c : {&noisy, &poisoned, &stripped}) {
        const Prediction p = predict(InferenceModel::from_checkpoint(*c), images);
        CHECK(p.classes == base.classes);
        for (std::size_t i = 0; i < p.distributions.size(); ++i) CHECK(p.distributions[i].values() == base.distributions[i].values());
    }

    Checkpoint moved = ck;
    scramble(moved, "F1", 0.0f);
    CHECK(predict(InferenceModel::from_checkpoint(moved), images).distributions.front().values() !=
          base.distributions.front().values());
}

TEST_CASE("zero head predicts the tie class") {
    Checkpoint ck = small_run::student_checkpoint();
    scramble(ck, "F1", 0.0f);
    auto [images, labels] = small_run::valid_weak();
    const Prediction p = predict(InferenceModel::from_checkpoint(ck), images);
    for (std::size_t i = 0; i < images.size(); ++i) {
        CHECK(p.distributions[i][0] == 0.5);
        CHECK(p.classes[i] == 0);
    }
}

TEST_CASE("batch prediction preserves order and count") {
    const auto model = InferenceModel::from_checkpoint(small_run::student_checkpoint());
    auto [images, labels] = small_run::valid_weak();
    const Prediction all = predict(model, images, 5);
    REQUIRE(all.classes.size() == images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Prediction one = predict(model, {images[i]}, 1);
        CHECK(one.classes.front() == all.classes[i]);
        CHECK(one.distributions.front().values() == all.distributions[i].values());
    }
    CHECK_THROWS_AS(predict(model, images, 0), ConfigError);
}

TEST_CASE("positive logit scaling never changes the predicted class") {
    Checkpoint ck = small_run::student_checkpoint();
    auto [images, labels] = small_run::valid_weak();
    const auto base = predict(InferenceModel::from_checkpoint(ck), images).classes;
    for (float scale : {0.01f, 0.5f, 3.0f, 40.0f}) {
        Checkpoint s = ck;
        for (auto& [name, blob] : s.blobs)
            if (name.rfind("F1/", 0) == 0)
                for (auto& v : blob) v *= scale;
        CHECK(predict(InferenceModel::from_checkpoint(s), images).classes == base);
    }
}

TEST_CASE("inference model requirements") {
    Checkpoint ck = small_run::student_checkpoint();
    Checkpoint no_f1 = ck;
    no_f1.erase("F1");
    CHECK_THROWS_AS(InferenceModel::from_checkpoint(no_f1), CompatibilityError);
    CHECK_THROWS_AS(InferenceModel::from_checkpoint(small_run::get().teacher), CompatibilityError);
}

TEST_CASE("accuracy and confusion") {
    auto r = accuracy({1, 1, 0, 1}, {1, 0, 0, 1}, 2);
    CHECK(r.accuracy == 0.75);
    CHECK(r.fold == 2);
    CHECK(r.n_valid == 4);
    CHECK(r.confusion[0][0] == 1);
    CHECK(r.confusion[0][1] == 1);
    CHECK(r.confusion[1][1] == 2);
    CHECK(r.recall[0] == 0.5);
    CHECK(r.recall[1] == 1.0);

    std::vector<int> labels(307, 1);
    labels.insert(labels.end(), 116, 0);
    auto floor = accuracy(std::vector<int>(423, 1), labels);
    CHECK(floor.accuracy == doctest::Approx(0.7258).epsilon(1e-4));
    CHECK(floor.accuracy == 307.0 / 423.0);

    CHECK(accuracy(labels, labels).accuracy == 1.0);
    CHECK_THROWS_AS(accuracy({1, 0}, {1}), ContractError);
    CHECK_THROWS_AS(accuracy({}, {}), ContractError);
    CHECK_THROWS_AS(accuracy({2}, {1}), ContractError);
}

TEST_CASE("confusion invariants on random input") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 1 + rng() % 50;
        std::vector<int> p(n), l(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(rng() & 1);
            l[i] = static_cast<int>(rng() & 1);
        }
        auto r = accuracy(p, l);
        const int total = r.confusion[0][0] + r.confusion[0][1] + r.confusion[1][0] + r.confusion[1][1];
        CHECK(total == r.n_valid);
        CHECK(r.accuracy == static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) / r.n_valid);
    }
}

TEST_CASE("report mean and layout") {
    CHECK(mean_accuracy({0.8, 0.8, 0.8, 0.9, 0.9}) == doctest::Approx(0.84).epsilon(1e-12));
    Report r{"full", "tiny", {0.8, 0.8, 0.8, 0.9, 0.9}, 0, 1.25, "cpu"};
    r.mean = mean_accuracy(r.folds);
    double sum = 0;
    for (double f : r.folds) sum += f;
    CHECK(r.mean == sum / 5);
    auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["method"] == "full");
    CHECK(j["backbone"] == "tiny");
    CHECK(j["folds"].size() == 5);
    CHECK(j["mean"].get<double>() == r.mean);
    CHECK(j["speed_ms"].get<double>() == 1.25);

    Report other{"w/o DA", "tiny", {0.7, 0.9}, 0.8, 1.0, "cpu"};
    const std::string table = format_table({r, other});
    CHECK(table.find("FOLD5") != std::string::npos);
    CHECK(table.find("Mean") != std::string::npos);
    CHECK(table.find("84.0%") != std::string::npos);
    CHECK(table.find("w/o DA") != std::string::npos);
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}

TEST_CASE("heatmaps") {
    FeatureMap constant{8, 4, 4, std::vector<float>(128, 2.5f), FeatureTag::Aligned};
    cv::Mat v = heatmap_values(constant, {16, 16});
    CHECK(v.size() == cv::Size(16, 16));
    double lo, hi;
    cv::minMaxLoc(v, &lo, &hi);
    CHECK(lo == 0.5f);
    CHECK(hi == 0.5f);

    FeatureMap ramp{2, 3, 3, std::vector<float>(18), FeatureTag::Positive};
    for (int i = 0; i < 18; ++i) ramp.values[static_cast<std::size_t>(i)] = static_cast<float>(i % 9);
    cv::Mat r = heatmap_values(ramp, {3, 3});
    CHECK(r.at<float>(0, 0) == 0.0f);
    CHECK(r.at<float>(2, 2) == 1.0f);
    CHECK(r.at<float>(1, 1) == doctest::Approx(0.5));

    cv::Mat base = fixtures::random_rgb(32, 32, 5);
    cv::Mat a = render_heatmap(ramp, base);
    cv::Mat b = render_heatmap(ramp, base);
    CHECK(a.type() == CV_8UC3);
    CHECK(cv::norm(a, b, cv::NORM_INF) == 0.0);

    fixtures::TempDir dir;
    export_feature_heatmap(ramp, base, dir / "h.png");
    CHECK(cv::imread((dir / "h.png").string()).size() == cv::Size(32, 32));
    export_heatmap_grid({{"input", {base, base}}, {"weak", {a, b}}}, dir / "grid.png");
    cv::Mat grid = cv::imread((dir / "grid.png").string());
    CHECK(grid.rows == 2 * (32 + 2));
    CHECK(grid.cols == 2 * (32 + 2));

    fixtures::write_text(dir / "blocker", "x");
    CHECK_THROWS_AS(export_feature_heatmap(ramp, base, dir / "blocker" / "h.png"), IoError);
    CHECK_THROWS_AS(heatmap_values(FeatureMap{2, 2, 2, {1.0f}, FeatureTag::Aligned}, {4, 4}), ShapeError);
    CHECK_THROWS_AS(export_heatmap_grid({}, dir / "e.png"), ContractError);
}

TEST_CASE("timing benchmark") {
    const auto model = InferenceModel::from_checkpoint(small_run::student_checkpoint());
    CHECK_THROWS_AS(timing_benchmark(model, 29, 0), ContractError);
    Timing t = timing_benchmark(model, 30, 2);
    CHECK(t.n_images == 30);
    CHECK(t.mean_ms > 0.0);
    CHECK(t.median_ms > 0.0);
    CHECK(!hardware_description().empty());
}

TEST_CASE("latency grows with input side and is stable") {
    const auto model = InferenceModel::from_checkpoint(small_run::student_checkpoint());
    const int side = model.config.in_side;
    const double base = timing_benchmark(model, 30, 3, side).median_ms;
    const double doubled = timing_benchmark(model, 30, 3, 2 * side).median_ms;
    CHECK(doubled > base);
    const double again = timing_benchmark(model, 30, 3, side).median_ms;
    CHECK(std::abs(again - base) <= 0.5 * std::max(again, base));
}

TEST_CASE("probe discriminator") {
    const auto cfg = ExtractorConfig::tiny();
    auto make = [](int n, float shift, std::uint64_t seed) {
        Tensor t(n, 32, 4, 4);
        std::mt19937_64 rng(seed);
        std::normal_distribution<float> d(shift, 1.0f);
        for (auto& v : t.data) v = d(rng);
        return t;
    };
    ProbeConfig pc;
    pc.epochs = 5;
    const double apart = train_probe(cfg, make(64, 1.5f, 1), make(64, -1.5f, 2), make(32, 1.5f, 3), make(32, -1.5f, 4), pc);
    const double same = train_probe(cfg, make(64, 0.0f, 5), make(64, 0.0f, 6), make(200, 0.0f, 7), make(200, 0.0f, 8), pc);
    CHECK(apart > 0.95);
    CHECK(same < 0.65);
    CHECK_THROWS_AS(train_probe(cfg, Tensor{}, make(4, 0, 1), make(4, 0, 2), make(4, 0, 3)), ConfigError);
}

TEST_CASE("alignment evidence on the small run") {
    const auto& d = small_run::get();
    auto ev = alignment_evidence(d.pairs, d.split, small_run::student_checkpoint());
    for (double v : {ev.probe_aligned_acc, ev.probe_unaligned_acc}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(ev.heatmap_aligned >= 0.0);
    CHECK(ev.heatmap_unaligned > 0.0);
}

TEST_CASE("cross validation plumbing") {
    const auto& d = small_run::get();
    PipelineConfig cfg;
    cfg.opt = d.opt;
    cfg.opt.epochs = 1;
    cfg.folds = {1};
    cfg.measure_speed = false;
    int calls = 0;
    auto out = cross_validate_variants(d.pairs, d.plan, cfg, {{1, 1, 1}, {1, 0, 1}},
                                       [&](const FoldRun& r) { calls += r.fold == 1; });
    CHECK(calls == 1);
    REQUIRE(out.reports.size() == 2);
    CHECK(out.reports[0].method == "full");
    CHECK(out.reports[1].method == "w/o DA");
    CHECK(out.reports[0].folds.size() == 1);
    CHECK(out.reports[0].mean == out.reports[0].folds[0]);
    CHECK(out.folds[0].variants.size() == 2);
    CHECK(out.folds[0].teacher_acc == out.folds[0].teacher.best_val_acc);
    CHECK_THROWS_AS(cross_validate_variants(d.pairs, d.plan, cfg, {}), ConfigError);
}

}
