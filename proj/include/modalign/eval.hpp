#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "modalign/trainer.hpp"

namespace modalign {

/// The weak-modality inference path: student extractor followed by F1.
/// Nothing else from a checkpoint is loaded.
struct InferenceModel {
    ExtractorConfig config;
    Extractor student;
    ClassifierHead f1;
    ChannelStats wl_stats;

    static InferenceModel from_checkpoint(const Checkpoint& ckpt);

private:
    explicit InferenceModel(const ExtractorConfig& cfg);
};

struct Prediction {
    std::vector<int> classes;
    std::vector<ClassDistribution> distributions;
};

/// Weak images must already be cropped to the extractor's input side.
Prediction predict(const InferenceModel& model, const std::vector<cv::Mat>& weak_images, int batch_size = 16);

struct FoldResult {
    int fold = 0;
    int n_valid = 0;
    double accuracy = 0;
    std::array<double, 2> recall{0, 0};
    std::array<std::array<int, 2>, 2> confusion{};  // [label][prediction]
};

FoldResult accuracy(const std::vector<int>& preds, const std::vector<int>& labels, int fold = 0);

/// One row of the per-fold comparison table.
struct Report {
    std::string method;
    std::string backbone;
    std::vector<double> folds;
    double mean = 0;
    double speed_ms = 0;
    std::string hardware;

    std::string to_json() const;
};

double mean_accuracy(const std::vector<double>& folds);
/// Aligned text table, one line per report.
std::string format_table(const std::vector<Report>& reports);
std::string hardware_description();

struct ProbeConfig {
    int epochs = 1;
    int batch_size = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
};

/// Trains a fresh discriminator on real (label 1) vs fake (label 0) features
/// and returns its held-out accuracy.
double train_probe(const ExtractorConfig& cfg, const Tensor& real_train, const Tensor& fake_train,
                   const Tensor& real_valid, const Tensor& fake_valid, const ProbeConfig& probe = {});

/// Quantitative alignment evidence for one trained student checkpoint.
struct AlignmentEvidence {
    double probe_unaligned_acc = 0;  // X_n vs X_p
    double probe_aligned_acc = 0;    // X_a vs X_p
    double heatmap_unaligned = 0;    // mean |H(X_n) - H(X_p)|
    double heatmap_aligned = 0;      // mean |H(X_a) - H(X_p)|
};

AlignmentEvidence alignment_evidence(const std::vector<PixelPair>& pairs, const Split& split,
                                     const Checkpoint& student_ckpt, const ProbeConfig& probe = {});

struct PipelineConfig {
    ExtractorConfig extractor = ExtractorConfig::tiny();
    OptimizerConfig opt = OptimizerConfig::synthetic();
    AugmentPolicy augment;
    AlignOptions align;  // weights are overridden per variant
    std::vector<int> folds;  // empty = every fold
    bool measure_speed = true;
    int speed_images = 30;
    int speed_warmup = 5;
    bool collect_evidence = false;
    ProbeConfig probe;
};

struct VariantFold {
    FoldResult result;
    AlignResult align;
    AlignmentEvidence evidence;
};

struct FoldRun {
    int fold = 0;
    double teacher_acc = 0;    // strong modality, teacher + F2
    double unaligned_acc = 0;  // weak modality, unaligned extractor + its pretrain head
    PretrainResult teacher;
    PretrainResult unaligned;
    std::vector<VariantFold> variants;  // parallel to the requested weights
};

struct CvOutcome {
    std::vector<Report> reports;  // one per variant
    std::vector<FoldRun> folds;
};

using FoldCallback = std::function<void(const FoldRun&)>;

/// Runs pretrain + align + predict per fold for each weight variant; the
/// two pretraining runs of a fold are shared by all variants.
CvOutcome cross_validate_variants(const std::vector<PixelPair>& pairs, const FoldPlan& plan,
                                  const PipelineConfig& cfg, const std::vector<LossWeights>& variants,
                                  const FoldCallback& on_fold = {});

Report cross_validate(const Manifest& manifest, int k, std::uint64_t seed, const PipelineConfig& cfg);

struct Timing {
    double mean_ms = 0;
    double median_ms = 0;
    int n_images = 0;
};

/// Batch-1 latency of the inference path. input_side = 0 uses the model's side.
Timing timing_benchmark(const InferenceModel& model, int n_images, int warmup, int input_side = 0);

/// Channel mean, min-max normalized (constant maps become 0.5), bilinearly
/// resized to `size`. CV_32F in [0,1].
cv::Mat heatmap_values(const FeatureMap& feat, cv::Size size);
/// Colour-mapped heatmap blended over the RGB base image.
cv::Mat render_heatmap(const FeatureMap& feat, const cv::Mat& base_image);
void export_feature_heatmap(const FeatureMap& feat, const cv::Mat& base_image, const std::filesystem::path& out_path);

struct HeatmapRow {
    std::string label;
    std::vector<cv::Mat> tiles;  // RGB, equal sizes
};
/// Rows stacked top to bottom (input, WL feature, aligned feature, NBI feature).
void export_heatmap_grid(const std::vector<HeatmapRow>& rows, const std::filesystem::path& out_path);

void write_rgb_image(const cv::Mat& rgb, const std::filesystem::path& path);

}  // namespace modalign
