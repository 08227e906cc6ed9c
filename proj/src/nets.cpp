#include "modalign/nets.hpp"

#include <algorithm>
#include <cmath>

#include "modalign/error.hpp"
#include "modalign/datamodel.hpp"
#include "modalign/losses.hpp"

namespace modalign {

ExtractorConfig ExtractorConfig::tiny() { return {"tiny", 64, 32, 4, "random"}; }

ExtractorConfig ExtractorConfig::resnet50_like() { return {"resnet50-like", 448, 2048, 14, "random"}; }

ExtractorConfig ExtractorConfig::by_name(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "resnet50-like") return resnet50_like();
    throw ConfigError("unknown extractor config '" + name + "'");
}

void ExtractorConfig::validate() const {
    const ExtractorConfig ref = by_name(name);
    if (in_side != ref.in_side || out_channels != ref.out_channels || out_side != ref.out_side) {
        throw ConfigError("extractor '" + name + "' requires in_side " + std::to_string(ref.in_side) + ", C " +
                          std::to_string(ref.out_channels) + ", h " + std::to_string(ref.out_side));
    }
    if (init != "random" && init != "pretrained") throw ConfigError("unknown extractor init '" + init + "'");
}

const char* to_string(FeatureTag tag) {
    switch (tag) {
        case FeatureTag::Aligned: return "aligned";
        case FeatureTag::Positive: return "positive";
        case FeatureTag::Negative: return "negative";
    }
    return "?";
}

FeatureMap FeatureMap::from_batch(const Tensor& batch, int index, FeatureTag tag) {
    if (index < 0 || index >= batch.n) throw ShapeError("feature index out of range");
    FeatureMap f;
    f.c = batch.c;
    f.h = batch.h;
    f.w = batch.w;
    f.values.assign(batch.sample(index), batch.sample(index) + batch.sample_size());
    f.source_tag = tag;
    return f;
}

Tensor FeatureMap::as_batch() const {
    Tensor t(1, c, h, w);
    if (values.size() != t.size()) throw ShapeError("feature map value count does not match its shape");
    std::copy(values.begin(), values.end(), t.data.begin());
    return t;
}

std::vector<LayerSpec> extractor_layers(const ExtractorConfig& cfg) {
    cfg.validate();
    std::vector<LayerSpec> l;
    if (cfg.name == "tiny") {
        // 64 -> 32 -> 16 -> 8 -> 4
        const int widths[] = {3, 8, 16, 32, 32};
        for (int i = 0; i < 4; ++i) {
            l.push_back(LayerSpec::conv(widths[i], widths[i + 1], 3, 2, 1));
            l.push_back(LayerSpec::relu());
        }
    } else {
        // 448 -> 224 -> 112 -> 56 -> 28 -> 14, then a 1x1 widening to 2048.
        const int widths[] = {3, 16, 32, 64, 128, 256};
        for (int i = 0; i < 5; ++i) {
            l.push_back(LayerSpec::conv(widths[i], widths[i + 1], 3, 2, 1));
            l.push_back(LayerSpec::relu());
        }
        l.push_back(LayerSpec::conv(256, 2048, 1, 1, 0));
        l.push_back(LayerSpec::relu());
    }
    return l;
}

std::vector<LayerSpec> head_layers(int channels) {
    return {LayerSpec::global_avg_pool(), LayerSpec::linear(channels, kNumClasses)};
}

std::vector<LayerSpec> discriminator_layers(const ExtractorConfig& cfg) {
    cfg.validate();
    const int c = cfg.out_channels;
    const int c4 = std::max(c / 4, 1);
    const int c16 = std::max(c / 16, 1);
    constexpr float kSlope = 0.2f;
    auto down = [](int s) { return (s + 2 - 3) / 2 + 1; };
    const int side = down(down(cfg.out_side));
    return {
        LayerSpec::conv(c, c4, 3, 2, 1),
        LayerSpec::leaky_relu(kSlope),
        LayerSpec::conv(c4, c16, 3, 2, 1),
        LayerSpec::leaky_relu(kSlope),
        LayerSpec::flatten(),
        LayerSpec::linear(c16 * side * side, 128),
        LayerSpec::leaky_relu(kSlope),
        LayerSpec::linear(128, 1),
    };
}

Extractor::Extractor(const ExtractorConfig& cfg) : config(cfg), net(extractor_layers(cfg)) {}

Extractor::Extractor(const ExtractorConfig& cfg, std::mt19937_64& rng) : Extractor(cfg) { net.init_he(rng); }

ClassifierHead::ClassifierHead(HeadRole r, int channels) : role(r), net(head_layers(channels)) {}

ClassifierHead::ClassifierHead(HeadRole r, int channels, std::mt19937_64& rng) : ClassifierHead(r, channels) {
    net.init_he(rng);
}

Discriminator::Discriminator(const ExtractorConfig& cfg) : net(discriminator_layers(cfg)) {}

Discriminator::Discriminator(const ExtractorConfig& cfg, std::mt19937_64& rng) : Discriminator(cfg) {
    net.init_he(rng);
}

Tensor extractor_forward(const Extractor& ex, const Tensor& images, Tape* tape) {
    const auto& cfg = ex.config;
    if (images.c != 3 || images.h != cfg.in_side || images.w != cfg.in_side) {
        throw ShapeError("extractor '" + cfg.name + "' expects Nx3x" + std::to_string(cfg.in_side) + "x" +
                         std::to_string(cfg.in_side) + ", got " + images.shape_string());
    }
    if (!images.all_finite()) throw NumericError("non-finite value in extractor input");
    return ex.net.forward(images, tape);
}

FeatureMap extractor_forward_one(const Extractor& ex, const Tensor& image, FeatureTag tag) {
    if (image.n != 1) throw ShapeError("expected a single image, got batch " + image.shape_string());
    return FeatureMap::from_batch(extractor_forward(ex, image), 0, tag);
}

std::vector<std::array<double, 2>> head_logits(const Tensor& head_out) {
    if (head_out.sample_size() != static_cast<std::size_t>(kNumClasses)) {
        throw ShapeError("head output must hold two logits, got " + head_out.shape_string());
    }
    std::vector<std::array<double, 2>> out(static_cast<std::size_t>(head_out.n));
    for (int i = 0; i < head_out.n; ++i) out[static_cast<std::size_t>(i)] = {head_out.sample(i)[0], head_out.sample(i)[1]};
    return out;
}

std::array<double, 2> head_forward(const ClassifierHead& head, const FeatureMap& feat) {
    const int width = head.net.layers().back().in;
    if (feat.c != width) {
        throw ShapeError("head expects " + std::to_string(width) + " channels, got " + std::to_string(feat.c));
    }
    return head_logits(head.net.forward(feat.as_batch())).front();
}

double discriminator_forward(const Discriminator& d, const FeatureMap& feat) {
    const Tensor out = d.net.forward(feat.as_batch());
    return clamp_prob(sigmoid(out.data.front()));
}

}  // namespace modalign
