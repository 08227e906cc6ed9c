#pragma once

#include <random>
#include <string>
#include <vector>

#include "modalign/network.hpp"

namespace modalign {

/// Backbone shape contract. Teacher, unaligned and student extractors of one
/// run always share the same config.
struct ExtractorConfig {
    std::string name = "tiny";  // "tiny" or "resnet50-like"
    int in_side = 64;
    int out_channels = 32;
    int out_side = 4;
    std::string init = "random";  // "random" or "pretrained"

    static ExtractorConfig tiny();
    static ExtractorConfig resnet50_like();
    static ExtractorConfig by_name(const std::string& name);

    void validate() const;
    bool operator==(const ExtractorConfig&) const = default;
};

enum class FeatureTag { Aligned, Positive, Negative };
const char* to_string(FeatureTag tag);

/// One C x h x w activation grid (X_a, X_p or X_n).
struct FeatureMap {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> values;
    FeatureTag source_tag = FeatureTag::Aligned;

    static FeatureMap from_batch(const Tensor& batch, int index, FeatureTag tag);
    Tensor as_batch() const;
};

std::vector<LayerSpec> extractor_layers(const ExtractorConfig& cfg);
std::vector<LayerSpec> head_layers(int channels);
std::vector<LayerSpec> discriminator_layers(const ExtractorConfig& cfg);

/// Extractor network together with the contract it must honour.
struct Extractor {
    ExtractorConfig config;
    Network net;

    explicit Extractor(const ExtractorConfig& cfg);
    Extractor(const ExtractorConfig& cfg, std::mt19937_64& rng);
};

enum class HeadRole { F1, F2 };

/// Global average pooling followed by one linear layer to two logits.
struct ClassifierHead {
    HeadRole role = HeadRole::F1;
    Network net;

    ClassifierHead(HeadRole r, int channels);
    ClassifierHead(HeadRole r, int channels, std::mt19937_64& rng);
};

/// Two stride-2 conv stages and two fully connected stages ending in one logit.
struct Discriminator {
    Network net;

    explicit Discriminator(const ExtractorConfig& cfg);
    Discriminator(const ExtractorConfig& cfg, std::mt19937_64& rng);
};

/// Batched extractor pass; images are normalized N x 3 x S x S. Throws
/// ShapeError on a side mismatch and NumericError on non-finite input.
Tensor extractor_forward(const Extractor& ex, const Tensor& images, Tape* tape = nullptr);
FeatureMap extractor_forward_one(const Extractor& ex, const Tensor& image, FeatureTag tag);

/// Unnormalized logits, one {l0, l1} pair per batch row.
std::vector<std::array<double, 2>> head_logits(const Tensor& head_out);
std::array<double, 2> head_forward(const ClassifierHead& head, const FeatureMap& feat);

/// Logistic of D's logit, clamped into [eps, 1 - eps].
double discriminator_forward(const Discriminator& d, const FeatureMap& feat);

}  // namespace modalign
