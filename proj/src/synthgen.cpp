#include "modalign/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "modalign/error.hpp"

namespace modalign {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
    if (n_pairs < 2) throw ConfigError("synth: n_pairs must be at least 2");
    if (image_side < 16) throw ConfigError("synth: image_side must be at least 16");
    if (!(class_prior >= 0.0 && class_prior <= 1.0)) throw ConfigError("synth: class_prior must lie in [0,1]");
    if (!(gap_noise_sigma >= 0.0)) throw ConfigError("synth: gap_noise_sigma must be non-negative");
    if (gap_blur_radius < 0) throw ConfigError("synth: gap_blur_radius must be non-negative");
    if (!(gap_contrast >= 0.0 && gap_contrast <= 1.0)) throw ConfigError("synth: gap_contrast must lie in [0,1]");
}

std::string SynthConfig::to_json() const {
    nlohmann::ordered_json j;
    j["n_pairs"] = n_pairs;
    j["image_side"] = image_side;
    j["class_prior"] = class_prior;
    j["gap_noise_sigma"] = gap_noise_sigma;
    j["gap_blur_radius"] = gap_blur_radius;
    j["gap_contrast"] = gap_contrast;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

SynthConfig SynthConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("synth config: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("synth config must be a JSON object");
    SynthConfig c;
    try {
        for (const auto& item : j.items()) {
            const auto& k = item.key();
            const auto& v = item.value();
            if (k == "n_pairs") c.n_pairs = v.get<int>();
            else if (k == "image_side") c.image_side = v.get<int>();
            else if (k == "class_prior") c.class_prior = v.get<double>();
            else if (k == "gap_noise_sigma") c.gap_noise_sigma = v.get<double>();
            else if (k == "gap_blur_radius") c.gap_blur_radius = v.get<int>();
            else if (k == "gap_contrast") c.gap_contrast = v.get<double>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else throw ConfigError("synth config: unknown key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("synth config: ") + e.what());
    }
    c.validate();
    return c;
}

ClassTexture class_texture(int label) {
    if (label == 0) return {0.0, 0.0, 0.0, 1, 4};
    return {6.0, 8.0, 0.15, 2, 5};
}

LatentPattern sample_latent(int label, std::mt19937_64& rng) {
    if (label < 0 || label >= kNumClasses) throw ContractError("latent label outside {0,1}");
    const ClassTexture t = class_texture(label);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    LatentPattern l;
    l.label = label;
    l.frequency = 1.5 + 2.5 * unit(rng);
    l.orientation = std::numbers::pi * unit(rng);
    l.phase = 2.0 * std::numbers::pi * unit(rng);
    l.fine_frequency = t.fine_lo + (t.fine_hi - t.fine_lo) * unit(rng);
    l.fine_orientation = std::numbers::pi * unit(rng);
    l.fine_phase = 2.0 * std::numbers::pi * unit(rng);
    l.fine_amplitude = t.fine_amplitude;
    l.speckle_seed = rng();
    l.blob_count = std::uniform_int_distribution<int>(t.blobs_lo, t.blobs_hi)(rng);
    for (int b = 0; b < l.blob_count; ++b) {
        l.blobs.push_back({0.15 + 0.7 * unit(rng), 0.15 + 0.7 * unit(rng), 0.04 + 0.03 * unit(rng)});
    }
    // Colours are class independent so the channel means carry no label signal.
    for (int ch = 0; ch < 3; ++ch) {
        l.background[ch] = static_cast<float>(0.3 + 0.3 * unit(rng));
        l.tint[ch] = static_cast<float>(0.6 + 0.4 * unit(rng));
    }
    return l;
}

cv::Mat render_clean(const LatentPattern& latent, int side) {
    cv::Mat img(side, side, CV_32FC3);
    const double c = std::cos(latent.orientation);
    const double s = std::sin(latent.orientation);
    const double fc = std::cos(latent.fine_orientation);
    const double fs = std::sin(latent.fine_orientation);
    constexpr double kStripeAmp = 0.25;
    constexpr double kBlobAmp = 0.45;
    constexpr double kSpeckle = 0.2;
    std::mt19937_64 srng(latent.speckle_seed);
    std::normal_distribution<double> speckle(0.0, 1.0);
    for (int y = 0; y < side; ++y) {
        auto* row = img.ptr<cv::Vec3f>(y);
        for (int x = 0; x < side; ++x) {
            const double u = (x * c + y * s) / side;
            const double stripe = std::sin(2.0 * std::numbers::pi * latent.frequency * u + latent.phase);
            const double fu = (x * fc + y * fs) / side;
            const double fine = latent.fine_amplitude *
                                std::sin(2.0 * std::numbers::pi * latent.fine_frequency * fu + latent.fine_phase);
            double blob = 0.0;
            for (const auto& b : latent.blobs) {
                const double r = b.radius * side;
                const double dx = x - b.cx * side;
                const double dy = y - b.cy * side;
                blob += std::exp(-(dx * dx + dy * dy) / (2.0 * r * r));
            }
            const double sp = kSpeckle * speckle(srng);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = sp + latent.background[ch] + kStripeAmp * latent.tint[ch] * stripe +
                                 kBlobAmp * blob + fine;
                row[x][ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return img;
}

cv::Mat degrade(const cv::Mat& clean, const SynthConfig& cfg, std::mt19937_64& rng) {
    cv::Mat out = clean.clone();
    if (cfg.gap_blur_radius > 0) {
        const int k = 2 * cfg.gap_blur_radius + 1;
        cv::blur(out, out, cv::Size(k, k), cv::Point(-1, -1), cv::BORDER_REFLECT_101);
    }
    if (cfg.gap_contrast != 1.0) {
        const cv::Scalar mean = cv::mean(out);
        const float f = static_cast<float>(cfg.gap_contrast);
        for (int y = 0; y < out.rows; ++y) {
            auto* row = out.ptr<cv::Vec3f>(y);
            for (int x = 0; x < out.cols; ++x) {
                for (int ch = 0; ch < 3; ++ch) {
                    const float m = static_cast<float>(mean[ch]);
                    row[x][ch] = m + f * (row[x][ch] - m);
                }
            }
        }
    }
    if (cfg.gap_noise_sigma > 0.0) {
        std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.gap_noise_sigma));
        for (int y = 0; y < out.rows; ++y) {
            auto* row = out.ptr<cv::Vec3f>(y);
            for (int x = 0; x < out.cols; ++x) {
                for (int ch = 0; ch < 3; ++ch) row[x][ch] += noise(rng);
            }
        }
    }
    for (int y = 0; y < out.rows; ++y) {
        auto* row = out.ptr<cv::Vec3f>(y);
        for (int x = 0; x < out.cols; ++x) {
            for (int ch = 0; ch < 3; ++ch) row[x][ch] = std::clamp(row[x][ch], 0.0f, 1.0f);
        }
    }
    return out;
}

cv::Mat quantize(const cv::Mat& image01) {
    cv::Mat out(image01.rows, image01.cols, CV_8UC3);
    for (int y = 0; y < image01.rows; ++y) {
        const auto* src = image01.ptr<cv::Vec3f>(y);
        auto* dst = out.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image01.cols; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                const float v = std::clamp(src[x][ch], 0.0f, 1.0f);
                dst[x][ch] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
    }
    return out;
}

PixelPair generate_pair(const LatentPattern& latent, const SynthConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const cv::Mat clean = render_clean(latent, cfg.image_side);
    PixelPair p;
    p.label = latent.label;
    p.nbi = quantize(clean);
    p.wl = quantize(degrade(clean, cfg, rng));
    return p;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string pair_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pair_%05d", i);
    return buf;
}

PixelPair make_indexed_pair(const SynthConfig& cfg, int i) {
    auto rng = pair_rng(cfg.seed, static_cast<std::uint64_t>(i));
    std::bernoulli_distribution coin(cfg.class_prior);
    const int label = coin(rng) ? 1 : 0;
    const LatentPattern latent = sample_latent(label, rng);
    PixelPair p = generate_pair(latent, cfg, rng);
    p.pair_id = pair_name(i);
    return p;
}

void write_rgb_png(const cv::Mat& rgb, const fs::path& path) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), bgr, {cv::IMWRITE_PNG_COMPRESSION, 3});
    } catch (const cv::Exception& e) {
        throw IoError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace

std::mt19937_64 pair_rng(std::uint64_t seed, std::uint64_t index) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(index + 1)));
}

std::vector<PixelPair> generate_pairs(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<PixelPair> out;
    out.reserve(static_cast<std::size_t>(cfg.n_pairs));
    for (int i = 0; i < cfg.n_pairs; ++i) out.push_back(make_indexed_pair(cfg, i));
    return out;
}

Manifest generate_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

    Manifest m;
    m.base_dir = out_dir;
    m.source_tag = "synthgen";
    const BBox full{0, 0, cfg.image_side, cfg.image_side};
    for (int i = 0; i < cfg.n_pairs; ++i) {
        const PixelPair p = make_indexed_pair(cfg, i);
        ManifestRecord r;
        r.pair_id = p.pair_id;
        r.wl_path = "images/" + p.pair_id + "_wl.png";
        r.nbi_path = "images/" + p.pair_id + "_nbi.png";
        r.label = p.label;
        r.wl_bbox = full;
        r.nbi_bbox = full;
        write_rgb_png(p.wl, out_dir / r.wl_path);
        write_rgb_png(p.nbi, out_dir / r.nbi_path);
        m.records.push_back(std::move(r));
    }
    save_manifest(m, out_dir / "manifest.jsonl");
    {
        std::ofstream cfg_out(out_dir / "synth_config.json", std::ios::binary);
        cfg_out << cfg.to_json();
    }
    return load_manifest(out_dir / "manifest.jsonl");
}

}  // namespace modalign
