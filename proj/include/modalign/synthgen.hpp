#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "modalign/datamodel.hpp"

namespace modalign {

/// Synthetic paired dataset parameters. The weak ("WL-analog") rendering is
/// the strong one blurred, contrast-reduced and noised.
struct SynthConfig {
    int n_pairs = 1000;
    int image_side = 64;
    double class_prior = 0.5;       // P(label == 1)
    double gap_noise_sigma = 0.25;  // additive Gaussian std, [0,1] pixel units
    int gap_blur_radius = 2;        // box blur radius in pixels
    double gap_contrast = 0.6;      // multiplicative contrast factor; 1 leaves contrast unchanged
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    /// Fields absent from `text` keep their defaults; unknown keys are rejected.
    static SynthConfig from_json(const std::string& text);
};

struct Blob {
    double cx = 0;  // fraction of side
    double cy = 0;
    double radius = 0;  // pixels
};

/// Class-determining structure shared by both renderings of a pair.
struct LatentPattern {
    int label = 0;
    double frequency = 0;    // coarse stripe cycles across the image
    double orientation = 0;  // radians
    double phase = 0;
    double fine_frequency = 0;  // fine texture cycles across the image
    double fine_orientation = 0;
    double fine_phase = 0;
    double fine_amplitude = 0;
    std::uint64_t speckle_seed = 0;  // class-independent pixel texture
    int blob_count = 0;
    std::vector<Blob> blobs;
    std::array<float, 3> background{};
    std::array<float, 3> tint{};
};

/// Per-class texture parameters.
struct ClassTexture {
    double fine_lo;  // fine texture frequency range, cycles across the image
    double fine_hi;
    double fine_amplitude;
    int blobs_lo;
    int blobs_hi;
};
ClassTexture class_texture(int label);

LatentPattern sample_latent(int label, std::mt19937_64& rng);

/// Float RGB rendering in [0,1] (CV_32FC3) before any degradation.
cv::Mat render_clean(const LatentPattern& latent, int side);
/// Applies blur, contrast and noise from cfg to a CV_32FC3 image.
cv::Mat degrade(const cv::Mat& clean, const SynthConfig& cfg, std::mt19937_64& rng);
cv::Mat quantize(const cv::Mat& image01);

/// nbi = clean rendering, wl = degraded rendering; both 8-bit RGB.
PixelPair generate_pair(const LatentPattern& latent, const SynthConfig& cfg, std::mt19937_64& rng);

/// Generator for pair `index`, independent of every other pair.
std::mt19937_64 pair_rng(std::uint64_t seed, std::uint64_t index);

/// Writes images/ and manifest.jsonl under out_dir and returns the loaded manifest.
Manifest generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// In-memory variant of generate_dataset (no files, pair ids identical).
std::vector<PixelPair> generate_pairs(const SynthConfig& cfg);

}  // namespace modalign
