#include "modalign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "modalign/error.hpp"

namespace modalign {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'D', 'A', 'L', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void append_u64(std::string& out, std::uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

}  // namespace

void Checkpoint::put(const std::string& prefix, const Network& net) {
    for (const auto& p : net.params()) blobs[prefix + "/" + p.name] = p.value;
}

void Checkpoint::get(const std::string& prefix, Network& net) const {
    for (auto& p : net.params()) {
        const auto it = blobs.find(prefix + "/" + p.name);
        if (it == blobs.end()) throw CompatibilityError("checkpoint lacks parameter '" + prefix + "/" + p.name + "'");
        if (it->second.size() != p.value.size()) {
            throw CompatibilityError("checkpoint parameter '" + it->first + "' has " +
                                     std::to_string(it->second.size()) + " values, expected " +
                                     std::to_string(p.value.size()));
        }
        p.value = it->second;
    }
}

bool Checkpoint::has(const std::string& prefix) const {
    const std::string key = prefix + "/";
    const auto it = blobs.lower_bound(key);
    return it != blobs.end() && it->first.compare(0, key.size(), key) == 0;
}

void Checkpoint::erase(const std::string& prefix) {
    const std::string key = prefix + "/";
    for (auto it = blobs.lower_bound(key); it != blobs.end() && it->first.compare(0, key.size(), key) == 0;) {
        it = blobs.erase(it);
    }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::ordered_json header;
    header["version"] = ckpt.version;
    header["epoch"] = ckpt.epoch;
    header["rng_state"] = ckpt.rng_state;
    header["config"] = ckpt.config;
    nlohmann::ordered_json blobs = nlohmann::ordered_json::array();
    for (const auto& [name, values] : ckpt.blobs) blobs.push_back({{"name", name}, {"count", values.size()}});
    header["blobs"] = std::move(blobs);
    const std::string text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    append_u64(out, text.size());
    out += text;
    for (const auto& [name, values] : ckpt.blobs) {
        out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
    }
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16) throw IoError("checkpoint truncated: missing header");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint file (bad magic)");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 8, 8);
    if (header_len > bytes.size() - 16) throw IoError("checkpoint truncated: header incomplete");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("checkpoint header unreadable: ") + e.what());
    }
    Checkpoint ckpt;
    try {
        ckpt.version = header.at("version").get<int>();
        if (ckpt.version != kCheckpointVersion) {
            throw CompatibilityError("checkpoint version " + std::to_string(ckpt.version) + " is not supported (expected " +
                                     std::to_string(kCheckpointVersion) + ")");
        }
        ckpt.epoch = header.at("epoch").get<std::int64_t>();
        ckpt.rng_state = header.at("rng_state").get<std::string>();
        ckpt.config = header.at("config");
        std::size_t offset = 16 + header_len;
        for (const auto& b : header.at("blobs")) {
            const auto name = b.at("name").get<std::string>();
            const auto count = b.at("count").get<std::size_t>();
            const std::size_t nbytes = count * sizeof(float);
            if (nbytes > bytes.size() - offset) throw IoError("checkpoint truncated inside blob '" + name + "'");
            std::vector<float> values(count);
            std::memcpy(values.data(), bytes.data() + offset, nbytes);
            offset += nbytes;
            ckpt.blobs.emplace(name, std::move(values));
        }
        if (offset != bytes.size()) throw IoError("checkpoint has trailing bytes");
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint header malformed: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

}  // namespace modalign
