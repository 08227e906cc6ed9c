#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace modalign {

/// Flat run configuration shared by every subcommand.
///
/// Precedence: the defaults below, then a JSON config file, then flags.
/// JSON keys are the field names; unknown keys are rejected.
struct RunConfig {
    // paths
    std::string manifest;   // synth output or any manifest.jsonl
    std::string out = "run";
    std::string teacher;    // default <out>/checkpoints/teacher.ckpt
    std::string unaligned;  // default <out>/checkpoints/unaligned.ckpt
    std::string student;    // default <out>/checkpoints/student.ckpt

    std::string extractor = "tiny";

    // optimizer
    double learning_rate = 1e-3;
    double weight_decay = 1e-8;
    double beta1 = 0.5;
    int epochs = 30;
    int batch_size = 16;
    std::uint64_t seed = 0;

    // synthetic data
    int n_pairs = 1000;
    int image_side = 64;
    double class_prior = 0.5;
    double gap_noise_sigma = 0.25;
    int gap_blur_radius = 2;
    double gap_contrast = 0.6;

    // alignment
    std::vector<std::string> weights{"1,1,1"};
    double margin = 0.85;
    std::string kl_order = "aligned-first";
    std::string student_init = "teacher";
    bool augment = true;

    // folds
    int k = 5;
    int fold = 0;
    std::vector<int> folds;  // cv only; empty = all
    int jobs = 1;

    // bench / viz
    int n_images = 30;
    int warmup = 5;
    int viz_samples = 4;

    nlohmann::ordered_json to_json() const;
    /// Overlays the keys present in `j` onto this config.
    void merge_json(const nlohmann::json& j);
    static RunConfig from_file(const std::filesystem::path& path);
};

/// Entry point for the command-line tool. Returns the process exit status:
/// 0 success, 1 module error, 2 usage error.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace modalign
