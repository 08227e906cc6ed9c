#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "modalign/network.hpp"

namespace modalign {

inline constexpr int kCheckpointVersion = 1;

/// Named float32 parameter blobs plus a JSON config snapshot.
///
/// On-disk layout (all integers little-endian):
///   bytes 0..7   magic "MODALCKP"
///   bytes 8..15  uint64 header length H
///   next H bytes UTF-8 JSON header:
///                {"version", "epoch", "rng_state", "config",
///                 "blobs": [{"name", "count"}, ...]}
///   remainder    blobs in header order, each `count` float32 values
struct Checkpoint {
    int version = kCheckpointVersion;
    std::int64_t epoch = 0;
    std::string rng_state;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, std::vector<float>> blobs;

    /// Stores every parameter of `net` as "<prefix>/<param name>".
    void put(const std::string& prefix, const Network& net);
    /// Loads "<prefix>/..." into `net`; throws CompatibilityError if any blob is missing or mis-sized.
    void get(const std::string& prefix, Network& net) const;
    bool has(const std::string& prefix) const;
    void erase(const std::string& prefix);
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

}  // namespace modalign
