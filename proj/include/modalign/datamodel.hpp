#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace modalign {

/// Axis-aligned crop region in pixel coordinates.
struct BBox {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool operator==(const BBox&) const = default;
    bool fits(int image_width, int image_height) const;
};

/// Class 0 is hyperplastic, class 1 adenomatous.
inline constexpr int kNumClasses = 2;

/// One manifest line: where a pair lives on disk and how to crop it.
struct ManifestRecord {
    std::string pair_id;
    std::string wl_path;   // as written in the manifest
    std::string nbi_path;  // as written in the manifest
    int label = 0;
    BBox wl_bbox;
    BBox nbi_bbox;

    bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    std::vector<std::string> class_names{"hyperplastic", "adenomatous"};
    std::string source_tag;
    std::filesystem::path base_dir;  // relative image paths resolve here

    std::filesystem::path resolve(const std::string& p) const;
    std::filesystem::path wl_file(std::size_t i) const { return resolve(records.at(i).wl_path); }
    std::filesystem::path nbi_file(std::size_t i) const { return resolve(records.at(i).nbi_path); }
};

/// Decoded pair as stored on disk (8-bit, 3-channel, RGB order).
struct PairedSample {
    std::string pair_id;
    cv::Mat wl_image;
    cv::Mat nbi_image;
    int label = 0;
    BBox wl_bbox;
    BBox nbi_bbox;
};

/// Pair after cropping: both images share one square side.
struct PixelPair {
    std::string pair_id;
    cv::Mat wl;
    cv::Mat nbi;
    int label = 0;
};

Manifest load_manifest(const std::filesystem::path& path);
std::string serialize_manifest(const Manifest& manifest);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Reads both images of record i and converts them to RGB.
PairedSample load_pair(const Manifest& manifest, std::size_t i);

/// Bilinear crop + resize of `box` to a side x side image of the same type.
cv::Mat crop_and_resize(const cv::Mat& image, const BBox& box, int side);

/// Convenience: load_pair followed by crop_and_resize on both modalities.
PixelPair load_cropped_pair(const Manifest& manifest, std::size_t i, int side);
std::vector<PixelPair> load_cropped_dataset(const Manifest& manifest, int side);

struct AugmentPolicy {
    double flip_h_prob = 0.5;
    double flip_v_prob = 0.5;
    std::vector<int> rotations{0, 90, 180, 270};  // degrees, quarter turns only
    bool paired_identical = true;

    void validate() const;
    static AugmentPolicy identity() { return {0.0, 0.0, {0}, true}; }
};

/// One realized draw of the policy.
struct AugmentDraw {
    bool flip_h = false;
    bool flip_v = false;
    int rotation = 0;
};

AugmentDraw draw_augment(const AugmentPolicy& policy, std::mt19937_64& rng);
cv::Mat apply_augment(const cv::Mat& image, const AugmentDraw& draw);
PixelPair augment(const PixelPair& pair, const AugmentPolicy& policy, std::mt19937_64& rng);

struct FoldPlan {
    std::uint64_t seed = 0;
    int k = 0;
    // In manifest order.
    std::vector<std::pair<std::string, int>> assignments;

    int fold_of(const std::string& pair_id) const;
    std::vector<std::size_t> train_indices(int fold) const;
    std::vector<std::size_t> valid_indices(int fold) const;
    std::vector<std::size_t> fold_sizes() const;

    std::string to_json() const;
    static FoldPlan from_json(const std::string& text);
};

FoldPlan make_folds(const Manifest& manifest, int k, std::uint64_t seed);

/// Per-channel statistics of [0,1]-scaled pixels.
struct ChannelStats {
    std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
    std::array<float, 3> stdev{1.0f, 1.0f, 1.0f};

    bool operator==(const ChannelStats&) const = default;
};

enum class Modality { Weak, Strong };

ChannelStats compute_channel_stats(const std::vector<PixelPair>& pairs,
                                   const std::vector<std::size_t>& indices, Modality modality);

/// Writes image as CHW floats: (pixel/255 - mean) / stdev.
void to_chw(const cv::Mat& image, const ChannelStats& stats, float* dst);

}  // namespace modalign
