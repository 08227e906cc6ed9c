#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "modalign/checkpoint.hpp"
#include "modalign/datamodel.hpp"
#include "modalign/losses.hpp"
#include "modalign/nets.hpp"

namespace modalign {

/// Adam hyperparameters and the epoch/batch budget.
struct OptimizerConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-8;
    int epochs = 500;
    int batch_size = 16;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    /// Desk-scale budget used for the synthetic benchmark (30 epochs, beta1 0.5).
    static OptimizerConfig synthetic();
    void validate() const;
    nlohmann::json to_json() const;
};

/// Adam with L2-style weight decay (decay added to the gradient).
class Adam {
public:
    Adam() = default;
    Adam(const Network& net, const OptimizerConfig& cfg);

    void step(Network& net, const Gradients& grads);
    std::int64_t steps() const { return t_; }

    void save(Checkpoint& ckpt, const std::string& prefix, const Network& net) const;
    void load(const Checkpoint& ckpt, const std::string& prefix, const Network& net);

private:
    OptimizerConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

/// Seeded initial weights shared by every extractor of a run, so teacher,
/// unaligned and a "random" student all start from the same point.
Extractor backbone_init(const ExtractorConfig& cfg, std::uint64_t seed);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> valid;

    static Split from_fold(const FoldPlan& plan, int fold);
};

/// Normalized N x 3 x S x S batch of one modality for the given pair indices.
Tensor make_image_batch(const std::vector<PixelPair>& pairs, const std::vector<std::size_t>& indices,
                        Modality modality, const ChannelStats& stats);
Tensor images_to_batch(const std::vector<cv::Mat>& images, const ChannelStats& stats);

/// Evaluation-mode features for every listed pair, computed in chunks.
Tensor extract_features(const Extractor& ex, const std::vector<PixelPair>& pairs,
                        const std::vector<std::size_t>& indices, Modality modality, const ChannelStats& stats);

nlohmann::json to_json(const ExtractorConfig& cfg);
ExtractorConfig extractor_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ChannelStats& s);
ChannelStats channel_stats_from_json(const nlohmann::json& j);

struct PretrainEpoch {
    int epoch = 0;
    double loss = 0;
    double val_acc = 0;
};

struct PretrainResult {
    /// Strong: blobs "teacher/..", "F2/..". Weak: blobs "unaligned/.." only.
    Checkpoint checkpoint;
    std::vector<PretrainEpoch> log;
    double best_val_acc = 0;
    int best_epoch = 0;
};

/// Supervised pretraining of one extractor + head on a single modality.
/// Keeps the parameters of the best validation epoch (epoch 0 = initialization).
PretrainResult pretrain(Modality modality, const std::vector<PixelPair>& pairs, const Split& split,
                        const ExtractorConfig& ext_cfg, const OptimizerConfig& cfg,
                        const AugmentPolicy& policy = {});

std::string pretrain_log_csv(const std::vector<PretrainEpoch>& log);

struct AlignOptions {
    LossWeights weights;
    TripletConfig triplet;
    AugmentPolicy augment;
    std::string student_init = "teacher";  // "teacher", "unaligned" or "random" (shared backbone init)
};

/// Everything the alternating phase mutates, plus the frozen branches.
struct AlignTrainState {
    ExtractorConfig config;
    OptimizerConfig opt;
    AlignOptions options;
    ChannelStats wl_stats;
    ChannelStats nbi_stats;

    // trainable
    Extractor student;
    ClassifierHead f1;
    Discriminator disc;
    Adam student_opt;
    Adam f1_opt;
    Adam disc_opt;

    // frozen
    Extractor teacher;
    Extractor unaligned;
    ClassifierHead f2;

    std::int64_t epoch = 0;
    std::mt19937_64 rng;

    AlignTrainState(const ExtractorConfig& cfg);
    std::uint64_t frozen_digest() const;
};

/// Builds the alignment state from the two pretraining checkpoints.
AlignTrainState make_align_state(const Checkpoint& teacher_ckpt, const Checkpoint& unaligned_ckpt,
                                 const OptimizerConfig& cfg, const AlignOptions& options);

struct AlignBatch {
    Tensor wl;
    Tensor nbi;
    std::vector<int> labels;
};

/// Augmentation draws come from state.rng.
AlignBatch make_align_batch(AlignTrainState& state, const std::vector<PixelPair>& pairs,
                            const std::vector<std::size_t>& indices, bool augment);

struct LossReport {
    double l_d = 0;
    double l_c = 0;
    double l_a = 0;
    double l_t = 0;
    double total = 0;  // weighted student objective
};

/// One discriminator update followed by one joint {student, F1} update.
LossReport align_step(AlignTrainState& state, const AlignBatch& batch);

struct AlignEpochMetrics {
    int epoch = 0;
    double l_d = 0;
    double l_c = 0;
    double l_a = 0;
    double l_t = 0;
    double val_acc = 0;
    double triplet_sat_rate = 0;
    double probe_d_acc = 0;
};

std::string align_metrics_csv(const std::vector<AlignEpochMetrics>& log);

Checkpoint to_checkpoint(const AlignTrainState& state);

struct AlignResult {
    Checkpoint best;  // best validation accuracy, earliest epoch on ties
    std::vector<AlignEpochMetrics> log;
    double best_val_acc = 0;
    int best_epoch = 0;
    std::vector<LossReport> first_epoch_steps;
};

AlignResult train_alignment(const std::vector<PixelPair>& pairs, const Split& split, const Checkpoint& teacher_ckpt,
                            const Checkpoint& unaligned_ckpt, const OptimizerConfig& cfg,
                            const AlignOptions& options = {});

}  // namespace modalign
