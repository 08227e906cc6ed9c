#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "modalign/datamodel.hpp"

namespace fixtures {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("modalign_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline cv::Mat random_rgb(int w, int h, std::uint64_t seed) {
    cv::Mat m(h, w, CV_8UC3);
    cv::RNG rng(seed);
    rng.fill(m, cv::RNG::UNIFORM, 0, 256);
    return m;
}

inline void write_png(const std::filesystem::path& p, const cv::Mat& rgb) {
    std::filesystem::create_directories(p.parent_path());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    cv::imwrite(p.string(), bgr);
}

/// In-memory manifest with n ids and alternating labels; no files behind it.
inline modalign::Manifest id_manifest(int n) {
    modalign::Manifest m;
    for (int i = 0; i < n; ++i) {
        modalign::ManifestRecord r;
        r.pair_id = "p" + std::to_string(i);
        r.wl_path = r.pair_id + "_wl.png";
        r.nbi_path = r.pair_id + "_nbi.png";
        r.label = i % 2;
        r.wl_bbox = r.nbi_bbox = {0, 0, 8, 8};
        m.records.push_back(r);
    }
    return m;
}

}  // namespace fixtures
