#include "modalign/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "modalign/error.hpp"

namespace modalign {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

bool BBox::fits(int image_width, int image_height) const {
    return x >= 0 && y >= 0 && w > 0 && h > 0 && x + w <= image_width && y + h <= image_height;
}

fs::path Manifest::resolve(const std::string& p) const {
    fs::path path(p);
    if (path.is_absolute()) return path;
    return base_dir / path;
}

namespace {

const std::array<const char*, 6> kRecordFields{"pair_id", "wl_path", "nbi_path",
                                               "label",   "wl_bbox", "nbi_bbox"};

BBox parse_bbox(const nlohmann::json& j, const char* field, std::size_t line) {
    if (!j.is_array() || j.size() != 4) {
        throw ParseError("line " + std::to_string(line) + ": '" + field +
                         "' must be an array [x,y,w,h]");
    }
    std::array<int, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
        if (!j[i].is_number_integer()) {
            throw ParseError("line " + std::to_string(line) + ": '" + field +
                             "' entries must be integers");
        }
        v[i] = j[i].get<int>();
    }
    BBox box{v[0], v[1], v[2], v[3]};
    if (box.w <= 0 || box.h <= 0 || box.x < 0 || box.y < 0) {
        throw ValidationError("line " + std::to_string(line) + ": '" + field +
                              "' must have non-negative origin and positive size");
    }
    return box;
}

ManifestRecord parse_record(const std::string& text, std::size_t line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("line " + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw ParseError("line " + std::to_string(line) + ": record must be an object");
    for (const char* f : kRecordFields) {
        if (!j.contains(f)) {
            throw ParseError("line " + std::to_string(line) + ": missing field '" + f + "'");
        }
    }
    for (const auto& item : j.items()) {
        if (std::find_if(kRecordFields.begin(), kRecordFields.end(),
                         [&](const char* f) { return item.key() == f; }) == kRecordFields.end()) {
            throw ParseError("line " + std::to_string(line) + ": unknown field '" + item.key() + "'");
        }
    }
    if (!j["pair_id"].is_string() || !j["wl_path"].is_string() || !j["nbi_path"].is_string()) {
        throw ParseError("line " + std::to_string(line) + ": pair_id, wl_path, nbi_path must be strings");
    }
    if (!j["label"].is_number_integer()) {
        throw ParseError("line " + std::to_string(line) + ": label must be an integer");
    }
    ManifestRecord r;
    r.pair_id = j["pair_id"].get<std::string>();
    r.wl_path = j["wl_path"].get<std::string>();
    r.nbi_path = j["nbi_path"].get<std::string>();
    r.label = j["label"].get<int>();
    if (r.label < 0 || r.label >= kNumClasses) {
        throw ValidationError("line " + std::to_string(line) + ": label " + std::to_string(r.label) +
                              " outside {0,1}");
    }
    if (r.pair_id.empty()) throw ValidationError("line " + std::to_string(line) + ": empty pair_id");
    r.wl_bbox = parse_bbox(j["wl_bbox"], "wl_bbox", line);
    r.nbi_bbox = parse_bbox(j["nbi_bbox"], "nbi_bbox", line);
    return r;
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open manifest " + path.string());

    Manifest m;
    m.base_dir = path.parent_path();
    m.source_tag = path.string();
    std::set<std::string> seen;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.find_first_not_of(" \t") == std::string::npos) continue;
        ManifestRecord r = parse_record(text, line);
        if (!seen.insert(r.pair_id).second) {
            throw ValidationError("line " + std::to_string(line) + ": duplicate pair_id '" + r.pair_id + "'");
        }
        for (const auto& p : {r.wl_path, r.nbi_path}) {
            if (!fs::is_regular_file(m.resolve(p))) {
                throw ValidationError("line " + std::to_string(line) + ": missing image file " +
                                      m.resolve(p).string());
            }
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

std::string serialize_manifest(const Manifest& manifest) {
    std::string out;
    for (const auto& r : manifest.records) {
        ordered_json j;
        j["pair_id"] = r.pair_id;
        j["wl_path"] = r.wl_path;
        j["nbi_path"] = r.nbi_path;
        j["label"] = r.label;
        j["wl_bbox"] = {r.wl_bbox.x, r.wl_bbox.y, r.wl_bbox.w, r.wl_bbox.h};
        j["nbi_bbox"] = {r.nbi_bbox.x, r.nbi_bbox.y, r.nbi_bbox.w, r.nbi_bbox.h};
        out += j.dump();
        out += '\n';
    }
    return out;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << serialize_manifest(manifest);
    if (!out) throw IoError("write failed for " + path.string());
}

namespace {

cv::Mat read_rgb(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw LoadError("cannot decode image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

}  // namespace

PairedSample load_pair(const Manifest& manifest, std::size_t i) {
    const auto& r = manifest.records.at(i);
    PairedSample s;
    s.pair_id = r.pair_id;
    s.label = r.label;
    s.wl_bbox = r.wl_bbox;
    s.nbi_bbox = r.nbi_bbox;
    s.wl_image = read_rgb(manifest.wl_file(i));
    s.nbi_image = read_rgb(manifest.nbi_file(i));
    return s;
}

cv::Mat crop_and_resize(const cv::Mat& image, const BBox& box, int side) {
    if (side <= 0) throw GeometryError("target side must be positive");
    if (box.w <= 0 || box.h <= 0) throw GeometryError("zero-area bounding box");
    if (!box.fits(image.cols, image.rows)) {
        std::ostringstream os;
        os << "bounding box (" << box.x << "," << box.y << "," << box.w << "," << box.h
           << ") outside " << image.cols << "x" << image.rows << " image";
        throw GeometryError(os.str());
    }
    cv::Mat roi = image(cv::Rect(box.x, box.y, box.w, box.h));
    cv::Mat out;
    if (box.w == side && box.h == side) {
        out = roi.clone();
    } else {
        cv::resize(roi, out, cv::Size(side, side), 0.0, 0.0, cv::INTER_LINEAR);
    }
    return out;
}

PixelPair load_cropped_pair(const Manifest& manifest, std::size_t i, int side) {
    PairedSample s = load_pair(manifest, i);
    PixelPair p;
    p.pair_id = s.pair_id;
    p.label = s.label;
    p.wl = crop_and_resize(s.wl_image, s.wl_bbox, side);
    p.nbi = crop_and_resize(s.nbi_image, s.nbi_bbox, side);
    return p;
}

std::vector<PixelPair> load_cropped_dataset(const Manifest& manifest, int side) {
    std::vector<PixelPair> out;
    out.reserve(manifest.records.size());
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        out.push_back(load_cropped_pair(manifest, i, side));
    }
    return out;
}

void AugmentPolicy::validate() const {
    if (flip_h_prob < 0.0 || flip_h_prob > 1.0 || flip_v_prob < 0.0 || flip_v_prob > 1.0) {
        throw ConfigError("augmentation probabilities must lie in [0,1]");
    }
    if (rotations.empty()) throw ConfigError("augmentation rotation set is empty");
    for (int r : rotations) {
        if (r != 0 && r != 90 && r != 180 && r != 270) {
            throw ConfigError("rotation " + std::to_string(r) + " is not a quarter turn");
        }
    }
}

AugmentDraw draw_augment(const AugmentPolicy& policy, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    AugmentDraw d;
    d.flip_h = coin(rng) < policy.flip_h_prob;
    d.flip_v = coin(rng) < policy.flip_v_prob;
    if (policy.rotations.size() == 1) {
        d.rotation = policy.rotations.front();
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, policy.rotations.size() - 1);
        d.rotation = policy.rotations[pick(rng)];
    }
    return d;
}

cv::Mat apply_augment(const cv::Mat& image, const AugmentDraw& draw) {
    if (draw.rotation != 0 && image.rows != image.cols) {
        throw ShapeError("quarter-turn rotation requires a square image");
    }
    cv::Mat out = image.clone();
    if (draw.flip_h) cv::flip(out, out, 1);
    if (draw.flip_v) cv::flip(out, out, 0);
    switch (draw.rotation) {
        case 0: break;
        case 90: cv::rotate(out, out, cv::ROTATE_90_CLOCKWISE); break;
        case 180: cv::rotate(out, out, cv::ROTATE_180); break;
        case 270: cv::rotate(out, out, cv::ROTATE_90_COUNTERCLOCKWISE); break;
        default: throw ConfigError("rotation " + std::to_string(draw.rotation) + " is not a quarter turn");
    }
    return out;
}

PixelPair augment(const PixelPair& pair, const AugmentPolicy& policy, std::mt19937_64& rng) {
    policy.validate();
    const bool rotates = std::any_of(policy.rotations.begin(), policy.rotations.end(),
                                     [](int r) { return r != 0; });
    if (rotates && (pair.wl.rows != pair.wl.cols || pair.nbi.rows != pair.nbi.cols)) {
        throw ShapeError("quarter-turn rotation enabled on a non-square pair '" + pair.pair_id + "'");
    }
    PixelPair out;
    out.pair_id = pair.pair_id;
    out.label = pair.label;
    const AugmentDraw first = draw_augment(policy, rng);
    const AugmentDraw second = policy.paired_identical ? first : draw_augment(policy, rng);
    out.wl = apply_augment(pair.wl, first);
    out.nbi = apply_augment(pair.nbi, second);
    return out;
}

int FoldPlan::fold_of(const std::string& pair_id) const {
    for (const auto& [id, fold] : assignments) {
        if (id == pair_id) return fold;
    }
    throw ContractError("pair_id '" + pair_id + "' not in fold plan");
}

std::vector<std::size_t> FoldPlan::train_indices(int fold) const {
    if (fold < 0 || fold >= k) throw ConfigError("fold index " + std::to_string(fold) + " out of range");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        if (assignments[i].second != fold) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> FoldPlan::valid_indices(int fold) const {
    if (fold < 0 || fold >= k) throw ConfigError("fold index " + std::to_string(fold) + " out of range");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        if (assignments[i].second == fold) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(std::max(k, 0)), 0);
    for (const auto& a : assignments) ++sizes.at(static_cast<std::size_t>(a.second));
    return sizes;
}

std::string FoldPlan::to_json() const {
    ordered_json j;
    j["seed"] = seed;
    j["k"] = k;
    ordered_json a = ordered_json::object();
    for (const auto& [id, fold] : assignments) a[id] = fold;
    j["assignments"] = std::move(a);
    return j.dump(2) + "\n";
}

FoldPlan FoldPlan::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("fold plan: ") + e.what());
    }
    FoldPlan p;
    try {
        p.seed = j.at("seed").get<std::uint64_t>();
        p.k = j.at("k").get<int>();
        for (const auto& item : j.at("assignments").items()) {
            p.assignments.emplace_back(item.key(), item.value().get<int>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("fold plan: ") + e.what());
    }
    for (const auto& a : p.assignments) {
        if (a.second < 0 || a.second >= p.k) throw ValidationError("fold plan: fold index out of range");
    }
    return p;
}

FoldPlan make_folds(const Manifest& manifest, int k, std::uint64_t seed) {
    const std::size_t n = manifest.records.size();
    if (k < 2) throw ConfigError("fold count must be at least 2");
    if (static_cast<std::size_t>(k) > n) {
        throw ConfigError("fold count " + std::to_string(k) + " exceeds record count " + std::to_string(n));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the plan does not depend on std::shuffle.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    FoldPlan plan;
    plan.seed = seed;
    plan.k = k;
    plan.assignments.resize(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        const std::size_t idx = order[pos];
        plan.assignments[idx] = {manifest.records[idx].pair_id, static_cast<int>(pos % static_cast<std::size_t>(k))};
    }
    return plan;
}

ChannelStats compute_channel_stats(const std::vector<PixelPair>& pairs,
                                   const std::vector<std::size_t>& indices, Modality modality) {
    std::array<double, 3> sum{0, 0, 0};
    std::array<double, 3> sq{0, 0, 0};
    double count = 0;
    for (std::size_t idx : indices) {
        const cv::Mat& img = modality == Modality::Weak ? pairs.at(idx).wl : pairs.at(idx).nbi;
        for (int r = 0; r < img.rows; ++r) {
            const auto* row = img.ptr<cv::Vec3b>(r);
            for (int c = 0; c < img.cols; ++c) {
                for (int ch = 0; ch < 3; ++ch) {
                    const double v = row[c][ch] / 255.0;
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        count += static_cast<double>(img.rows) * img.cols;
    }
    ChannelStats s;
    if (count == 0) return s;
    for (int ch = 0; ch < 3; ++ch) {
        const double mean = sum[ch] / count;
        const double var = std::max(sq[ch] / count - mean * mean, 0.0);
        s.mean[ch] = static_cast<float>(mean);
        s.stdev[ch] = static_cast<float>(std::max(std::sqrt(var), 1e-3));
    }
    return s;
}

void to_chw(const cv::Mat& image, const ChannelStats& stats, float* dst) {
    if (image.type() != CV_8UC3) throw ShapeError("expected an 8-bit 3-channel image");
    const int plane = image.rows * image.cols;
    for (int r = 0; r < image.rows; ++r) {
        const auto* row = image.ptr<cv::Vec3b>(r);
        for (int c = 0; c < image.cols; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                const float v = row[c][ch] / 255.0f;
                dst[ch * plane + r * image.cols + c] = (v - stats.mean[ch]) / stats.stdev[ch];
            }
        }
    }
}

}  // namespace modalign
