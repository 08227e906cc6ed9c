#include <algorithm>
#include <functional>
#include <set>

#include "doctest.h"
#include "modalign/datamodel.hpp"
#include "modalign/error.hpp"
#include "support/fixtures.hpp"

using namespace modalign;
using fixtures::TempDir;

namespace {

std::string record_line(const std::string& id, int label, const std::string& extra = "") {
    return R"({"pair_id":")" + id + R"(","wl_path":"img/)" + id + R"(_wl.png","nbi_path":"img/)" + id +
           R"(_nbi.png","label":)" + std::to_string(label) + R"(,"wl_bbox":[0,0,16,16],"nbi_bbox":[2,2,12,12])" +
           extra + "}\n";
}

void write_images(const TempDir& dir, const std::string& id) {
    fixtures::write_png(dir / ("img/" + id + "_wl.png"), fixtures::random_rgb(20, 18, 1));
    fixtures::write_png(dir / ("img/" + id + "_nbi.png"), fixtures::random_rgb(20, 18, 2));
}

template <class E>
std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const E& e) {
        return e.what();
    }
    return "<no throw>";
}

}  // namespace

TEST_SUITE("datamodel") {

TEST_CASE("two-line manifest loads in file order") {
    TempDir dir;
    write_images(dir, "b");
    write_images(dir, "a");
    fixtures::write_text(dir / "m.jsonl", record_line("b", 1) + record_line("a", 0));
    Manifest m = load_manifest(dir / "m.jsonl");
    REQUIRE(m.records.size() == 2);
    CHECK(m.records[0].pair_id == "b");
    CHECK(m.records[1].pair_id == "a");
    CHECK(m.records[0].label == 1);
    CHECK(m.records[1].nbi_bbox == BBox{2, 2, 12, 12});
    CHECK(std::filesystem::exists(m.wl_file(0)));
}

TEST_CASE("serialize of a loaded manifest reproduces the file byte for byte") {
    TempDir dir;
    write_images(dir, "x1");
    write_images(dir, "x2");
    const std::string text = record_line("x1", 0) + record_line("x2", 1);
    fixtures::write_text(dir / "m.jsonl", text);
    Manifest m = load_manifest(dir / "m.jsonl");
    CHECK(serialize_manifest(m) == text);
    save_manifest(m, dir / "again.jsonl");
    CHECK(fixtures::read_text(dir / "again.jsonl") == text);
    CHECK(serialize_manifest(load_manifest(dir / "again.jsonl")) == text);
}

TEST_CASE("manifest errors") {
    TempDir dir;
    write_images(dir, "a");
    write_images(dir, "b");

    CHECK_THROWS_AS(load_manifest(dir / "absent.jsonl"), LoadError);

    fixtures::write_text(dir / "label.jsonl", record_line("a", 0) + record_line("b", 3));
    const auto msg = message_of<ValidationError>([&] { load_manifest(dir / "label.jsonl"); });
    CHECK(msg.find("line 2") != std::string::npos);

    fixtures::write_text(dir / "bad.jsonl", record_line("a", 0) + "{not json\n");
    CHECK(message_of<ParseError>([&] { load_manifest(dir / "bad.jsonl"); }).find("line 2") != std::string::npos);

    fixtures::write_text(dir / "field.jsonl", R"({"pair_id":"a","wl_path":"img/a_wl.png","label":0})" "\n");
    CHECK_THROWS_AS(load_manifest(dir / "field.jsonl"), ParseError);

    fixtures::write_text(dir / "extra.jsonl", record_line("a", 0, R"(,"note":1)"));
    CHECK_THROWS_AS(load_manifest(dir / "extra.jsonl"), ParseError);

    fixtures::write_text(dir / "dup.jsonl", record_line("a", 0) + record_line("a", 1));
    CHECK_THROWS_AS(load_manifest(dir / "dup.jsonl"), ValidationError);

    fixtures::write_text(dir / "missing.jsonl", record_line("zz", 0));
    CHECK_THROWS_AS(load_manifest(dir / "missing.jsonl"), ValidationError);
}

TEST_CASE("crop to the requested square side") {
    cv::Mat img = fixtures::random_rgb(600, 500, 3);
    cv::Mat out = crop_and_resize(img, {10, 20, 100, 50}, 448);
    CHECK(out.cols == 448);
    CHECK(out.rows == 448);
    CHECK(out.type() == img.type());
}

TEST_CASE("full-image crop at native side is the identity") {
    cv::Mat img = fixtures::random_rgb(64, 64, 4);
    cv::Mat out = crop_and_resize(img, {0, 0, 64, 64}, 64);
    CHECK(cv::norm(img, out, cv::NORM_INF) == 0.0);
}

TEST_CASE("constant colour survives resampling") {
    cv::Mat img(37, 53, CV_8UC3, cv::Scalar(12, 200, 77));
    for (BBox box : {BBox{0, 0, 53, 37}, BBox{5, 3, 7, 30}, BBox{40, 10, 13, 2}}) {
        cv::Mat out = crop_and_resize(img, box, 29);
        CHECK(out.size() == cv::Size(29, 29));
        CHECK(cv::norm(out, cv::Mat(29, 29, CV_8UC3, cv::Scalar(12, 200, 77)), cv::NORM_INF) == 0.0);
    }
}

TEST_CASE("crop geometry errors") {
    cv::Mat img = fixtures::random_rgb(100, 80, 5);
    CHECK_THROWS_AS(crop_and_resize(img, {0, 0, 0, 10}, 32), GeometryError);
    CHECK_THROWS_AS(crop_and_resize(img, {90, 0, 20, 10}, 32), GeometryError);
    CHECK_THROWS_AS(crop_and_resize(img, {-1, 0, 20, 10}, 32), GeometryError);
    CHECK_THROWS_AS(crop_and_resize(img, {0, 75, 20, 10}, 32), GeometryError);
}

TEST_CASE("crop output side is independent of box aspect ratio") {
    std::mt19937_64 rng(6);
    cv::Mat img = fixtures::random_rgb(120, 90, 6);
    for (int i = 0; i < 50; ++i) {
        const int w = 1 + static_cast<int>(rng() % 120), h = 1 + static_cast<int>(rng() % 90);
        const int x = static_cast<int>(rng() % (121 - w)), y = static_cast<int>(rng() % (91 - h));
        const int side = 1 + static_cast<int>(rng() % 70);
        cv::Mat out = crop_and_resize(img, {x, y, w, h}, side);
        CHECK(out.size() == cv::Size(side, side));
    }
}

TEST_CASE("augmentation") {
    PixelPair p{"q", fixtures::random_rgb(16, 16, 7), fixtures::random_rgb(16, 16, 8), 1};

    SUBCASE("identity policy") {
        std::mt19937_64 rng(1);
        auto out = augment(p, AugmentPolicy::identity(), rng);
        CHECK(cv::norm(out.wl, p.wl, cv::NORM_INF) == 0.0);
        CHECK(cv::norm(out.nbi, p.nbi, cv::NORM_INF) == 0.0);
        CHECK(out.label == 1);
        CHECK(out.pair_id == "q");
    }
    SUBCASE("determinism") {
        std::mt19937_64 r1(9), r2(9);
        auto a = augment(p, AugmentPolicy{}, r1);
        auto b = augment(p, AugmentPolicy{}, r2);
        CHECK(cv::norm(a.wl, b.wl, cv::NORM_INF) == 0.0);
        CHECK(cv::norm(a.nbi, b.nbi, cv::NORM_INF) == 0.0);
    }
    SUBCASE("horizontal flip is an involution") {
        AugmentDraw d;
        d.flip_h = true;
        cv::Mat twice = apply_augment(apply_augment(p.wl, d), d);
        CHECK(cv::norm(twice, p.wl, cv::NORM_INF) == 0.0);
        CHECK(cv::norm(apply_augment(p.wl, d), p.wl, cv::NORM_INF) > 0.0);
    }
    SUBCASE("paired draws keep both modalities in register") {
        PixelPair same{"s", p.wl, p.wl.clone(), 0};
        std::mt19937_64 rng(3);
        for (int i = 0; i < 20; ++i) {
            auto out = augment(same, AugmentPolicy{}, rng);
            CHECK(cv::norm(out.wl, out.nbi, cv::NORM_INF) == 0.0);
            CHECK(out.label == 0);
        }
    }
    SUBCASE("quarter turns on non-square input") {
        PixelPair rect{"r", fixtures::random_rgb(16, 12, 1), fixtures::random_rgb(16, 12, 2), 0};
        std::mt19937_64 rng(1);
        CHECK_THROWS_AS(augment(rect, AugmentPolicy{}, rng), ShapeError);
        AugmentPolicy flips{0.5, 0.5, {0}, true};
        CHECK_NOTHROW(augment(rect, flips, rng));
    }
    SUBCASE("policy validation") {
        CHECK_THROWS_AS((AugmentPolicy{1.5, 0.0, {0}, true}.validate()), ConfigError);
        CHECK_THROWS_AS((AugmentPolicy{0.5, 0.5, {45}, true}.validate()), ConfigError);
    }
}

TEST_CASE("ten ids in five folds") {
    auto plan = make_folds(fixtures::id_manifest(10), 5, 42);
    CHECK(plan.fold_sizes() == std::vector<std::size_t>{2, 2, 2, 2, 2});
    std::set<std::size_t> seen;
    for (int f = 0; f < 5; ++f) {
        for (auto i : plan.valid_indices(f)) CHECK(seen.insert(i).second);
    }
    CHECK(seen.size() == 10);
}

TEST_CASE("fold sizes for the paired dataset size") {
    auto plan = make_folds(fixtures::id_manifest(423), 5, 1);
    auto sizes = plan.fold_sizes();
    std::vector<std::size_t> want{85, 85, 85, 84, 84};
    CHECK(sizes == want);
    // Independent arithmetic: 423 = 5 * 84 + 3.
    CHECK(423 / 5 == 84);
    CHECK(423 % 5 == 3);
    CHECK(plan.train_indices(0).size() == 338);
    CHECK(plan.valid_indices(0).size() == 85);
}

TEST_CASE("fold plans are deterministic and round-trip through JSON") {
    auto m = fixtures::id_manifest(57);
    auto a = make_folds(m, 5, 7);
    auto b = make_folds(m, 5, 7);
    CHECK(a.to_json() == b.to_json());
    CHECK(make_folds(m, 5, 8).to_json() != a.to_json());
    auto c = FoldPlan::from_json(a.to_json());
    CHECK(c.to_json() == a.to_json());
    CHECK(c.fold_of("p3") == a.fold_of("p3"));
    CHECK_THROWS_AS(a.fold_of("nope"), ContractError);
    CHECK_THROWS_AS(FoldPlan::from_json("{"), ParseError);
}

TEST_CASE("fold partition property") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 300);
        const int k = 2 + static_cast<int>(rng() % std::min(n - 1, 9));
        auto plan = make_folds(fixtures::id_manifest(n), k, rng());
        auto sizes = plan.fold_sizes();
        CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
        std::vector<int> count(static_cast<std::size_t>(n), 0);
        for (int f = 0; f < k; ++f) {
            auto tr = plan.train_indices(f);
            auto va = plan.valid_indices(f);
            CHECK(tr.size() + va.size() == static_cast<std::size_t>(n));
            for (auto i : va) ++count[i];
        }
        CHECK(std::all_of(count.begin(), count.end(), [](int c) { return c == 1; }));
    }
}

TEST_CASE("fold configuration errors") {
    CHECK_THROWS_AS(make_folds(fixtures::id_manifest(4), 5, 0), ConfigError);
    auto plan = make_folds(fixtures::id_manifest(10), 5, 0);
    CHECK_THROWS_AS(plan.valid_indices(5), ConfigError);
}

TEST_CASE("channel statistics and normalization") {
    cv::Mat a(4, 4, CV_8UC3, cv::Scalar(0, 51, 255));
    cv::Mat b(4, 4, CV_8UC3, cv::Scalar(255, 51, 255));
    std::vector<PixelPair> pairs{{"a", a, b, 0}, {"b", b, a, 1}};
    auto s = compute_channel_stats(pairs, {0, 1}, Modality::Weak);
    CHECK(s.mean[0] == doctest::Approx(0.5));
    CHECK(s.stdev[0] == doctest::Approx(0.5));
    CHECK(s.mean[1] == doctest::Approx(0.2));
    CHECK(s.stdev[1] == doctest::Approx(1e-3));  // floor for a constant channel
    auto strong_only_first = compute_channel_stats(pairs, {0}, Modality::Strong);
    CHECK(strong_only_first.mean[0] == doctest::Approx(1.0));

    std::vector<float> chw(3 * 16);
    to_chw(a, s, chw.data());
    CHECK(chw[0] == doctest::Approx(-1.0));
    CHECK(chw[16] == doctest::Approx(0.0).epsilon(1e-4));
}

}
