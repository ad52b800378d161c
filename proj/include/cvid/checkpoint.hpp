#pragma once

// Binary checkpoint container:
//   "CVIDCKPT" | u32 version | u64 header bytes | JSON header | raw payload | u64 FNV-1a of payload
// The header lists every array (name, kind, element count) in payload order,
// plus the network configuration and training metadata. Arrays are stored in
// their native scalar type, so save/load is bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "cvid/errors.hpp"
#include "cvid/model.hpp"

namespace cvid {

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'C', 'V', 'I', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
constexpr const char* scalar_name() {
    if constexpr (std::is_same_v<T, float>)
        return "float32";
    else
        return "float64";
}

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
    return h;
}

template <class V>
void put(std::vector<unsigned char>& buf, const V& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf.insert(buf.end(), p, p + sizeof(V));
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const NetworkConfig& c) {
    return {{"depth", c.depth}, {"filters", c.filters}, {"kernel", c.kernel},
            {"sde_layers", c.sde_layers}, {"leaky_slope", c.leaky_slope}};
}

inline NetworkConfig network_config_from_json(const nlohmann::ordered_json& j) {
    NetworkConfig c;
    c.depth = j.at("depth").get<int>();
    c.filters = j.at("filters").get<int>();
    c.kernel = j.at("kernel").get<int>();
    c.sde_layers = j.at("sde_layers").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    return c;
}

template <class T>
void save_checkpoint(CvidModel<T>& model, const std::filesystem::path& path) {
    static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
    nlohmann::ordered_json header;
    header["scalar"] = detail::scalar_name<T>();
    header["config"] = to_json(model.config());
    header["meta"] = {{"epoch", model.meta().epoch}, {"step", model.meta().step}, {"seed", model.meta().seed}};
    auto& index = header["tensors"] = nlohmann::ordered_json::array();
    std::vector<unsigned char> payload;
    auto append = [&](const std::string& name, const char* kind, const std::vector<T>& v) {
        index.push_back({{"name", name}, {"kind", kind}, {"count", v.size()}});
        const auto* p = reinterpret_cast<const unsigned char*>(v.data());
        payload.insert(payload.end(), p, p + v.size() * sizeof(T));
    };
    model.visit_params([&](const std::string& name, Param<T>& p) { append(name, "param", p.value); });
    model.visit_buffers([&](const std::string& name, std::vector<T>& b) { append(name, "buffer", b); });

    const std::string hdr = header.dump();
    std::vector<unsigned char> buf(detail::kCheckpointMagic, detail::kCheckpointMagic + 8);
    detail::put(buf, detail::kCheckpointVersion);
    detail::put(buf, static_cast<std::uint64_t>(hdr.size()));
    buf.insert(buf.end(), hdr.begin(), hdr.end());
    buf.insert(buf.end(), payload.begin(), payload.end());
    detail::put(buf, detail::fnv1a(payload.data(), payload.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

/// Loads a checkpoint written with the same scalar type. Any structural
/// mismatch or corruption raises CheckpointError.
template <class T>
CvidModel<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = "checkpoint " + path.string() + ": ";
    if (buf.size() < 20 || std::memcmp(buf.data(), detail::kCheckpointMagic, 8) != 0)
        throw CheckpointError(where + "bad magic");
    std::uint32_t version;
    std::uint64_t hlen;
    std::memcpy(&version, buf.data() + 8, 4);
    std::memcpy(&hlen, buf.data() + 12, 8);
    if (version != detail::kCheckpointVersion) throw CheckpointError(where + "unsupported version " + std::to_string(version));
    if (hlen > buf.size() - 20) throw CheckpointError(where + "truncated header");

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(buf.begin() + 20, buf.begin() + 20 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(where + "corrupt header: " + e.what());
    }

    try {
        if (header.at("scalar").get<std::string>() != detail::scalar_name<T>())
            throw CheckpointError(where + "scalar type " + header.at("scalar").get<std::string>() + " does not match");
        CvidModel<T> model(network_config_from_json(header.at("config")));
        const auto& meta = header.at("meta");
        model.meta() = {meta.at("epoch").get<std::int64_t>(), meta.at("step").get<std::int64_t>(),
                        meta.at("seed").get<std::uint64_t>()};

        const std::size_t payload_begin = 20 + hlen;
        std::size_t payload_bytes = 0;
        for (const auto& t : header.at("tensors")) payload_bytes += t.at("count").get<std::size_t>() * sizeof(T);
        if (buf.size() != payload_begin + payload_bytes + 8) throw CheckpointError(where + "payload size mismatch");
        std::uint64_t stored;
        std::memcpy(&stored, buf.data() + payload_begin + payload_bytes, 8);
        if (stored != detail::fnv1a(buf.data() + payload_begin, payload_bytes))
            throw CheckpointError(where + "payload checksum mismatch");

        std::size_t i = 0, offset = payload_begin;
        const auto& index = header.at("tensors");
        auto take = [&](const std::string& name, const char* kind, std::vector<T>& dst) {
            if (i >= index.size()) throw CheckpointError(where + "missing array " + name);
            const auto& t = index.at(i++);
            if (t.at("name").get<std::string>() != name || t.at("kind").get<std::string>() != kind ||
                t.at("count").get<std::size_t>() != dst.size())
                throw CheckpointError(where + "array layout mismatch at " + name);
            std::memcpy(dst.data(), buf.data() + offset, dst.size() * sizeof(T));
            offset += dst.size() * sizeof(T);
        };
        model.visit_params([&](const std::string& name, Param<T>& p) { take(name, "param", p.value); });
        model.visit_buffers([&](const std::string& name, std::vector<T>& b) { take(name, "buffer", b); });
        if (i != index.size()) throw CheckpointError(where + "unexpected extra arrays");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(where + "invalid header: " + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(where + e.what());
    }
}

}  // namespace cvid
