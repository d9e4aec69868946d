#include "denomae/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "denomae/errors.hpp"

namespace denomae {

namespace {

constexpr char kMagic[8] = {'D', 'M', 'A', 'E', 'v', '1', '\0', '\0'};

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

void put_u64le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace

uint32_t crc32(const void* data, size_t size, uint32_t seed) {
    static const auto table = make_crc_table();
    uint32_t c = seed ^ 0xffffffffu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void save_checkpoint(const model::ModelState& state, const nlohmann::json& extra,
                     const std::filesystem::path& path) {
    std::string payload;
    nlohmann::json manifest = nlohmann::json::array();
    for (const Parameter& p : state.params) {
        auto entry = [&](const std::string& name, const Tensor& t, int64_t steps) {
            const size_t offset = payload.size();
            append_tensor_bytes(t, payload);
            const size_t size = payload.size() - offset;
            nlohmann::json e;
            e["name"] = name;
            e["shape"] = t.shape;
            e["offset"] = offset;
            e["size"] = size;
            e["crc32"] = crc32(payload.data() + offset, size);
            e["steps"] = steps;
            manifest.push_back(std::move(e));
        };
        entry(p.name, p.value, p.step_count);
        entry(p.name + "#m", p.adam_m, p.step_count);
        entry(p.name + "#v", p.adam_v, p.step_count);
    }

    nlohmann::json header;
    header["format"] = "DMAE v1";
    header["version"] = 1;
    header["config"] = state.cfg.to_json();
    header["extra"] = extra;
    header["params"] = std::move(manifest);
    const std::string header_bytes = header.dump();

    std::string file;
    file.append(kMagic, sizeof(kMagic));
    put_u64le(file, header_bytes.size());
    file += header_bytes;
    file += payload;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path.string());
    f.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) + 8 ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError("checkpoint: bad magic in " + path.string());
    }
    const uint64_t header_len =
        get_u64le(reinterpret_cast<const unsigned char*>(bytes.data()) + sizeof(kMagic));
    const size_t header_at = sizeof(kMagic) + 8;
    if (bytes.size() < header_at + header_len) throw DataError("checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(header_at, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: header parse failed: ") + e.what());
    }
    if (header.value("format", "") != std::string("DMAE v1")) {
        throw DataError("checkpoint: unsupported format");
    }

    LoadedCheckpoint out;
    out.state = model::ModelState::init(model::ModelConfig::from_json(header.at("config")), 0);
    out.extra = header.value("extra", nlohmann::json::object());

    const char* payload = bytes.data() + header_at + header_len;
    const size_t payload_size = bytes.size() - header_at - header_len;
    for (const auto& e : header.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        const size_t offset = e.at("offset").get<size_t>();
        const size_t size = e.at("size").get<size_t>();
        if (offset + size > payload_size) throw DataError("checkpoint: payload out of range");
        if (crc32(payload + offset, size) != e.at("crc32").get<uint32_t>()) {
            throw DataError("checkpoint: checksum mismatch for '" + name + "'");
        }
        size_t consumed = 0;
        Tensor t = parse_tensor_bytes(payload + offset, size, consumed);
        if (consumed != size) throw DataError("checkpoint: payload size mismatch for " + name);

        std::string base = name;
        int kind = 0;
        if (base.ends_with("#m")) {
            kind = 1;
            base = base.substr(0, base.size() - 2);
        } else if (base.ends_with("#v")) {
            kind = 2;
            base = base.substr(0, base.size() - 2);
        }
        Parameter& p = out.state.find(base);
        Tensor& dst = kind == 0 ? p.value : kind == 1 ? p.adam_m : p.adam_v;
        if (t.shape != dst.shape) {
            throw DataError("checkpoint: shape mismatch for '" + name + "': expected " +
                            shape_str(dst.shape) + ", got " + shape_str(t.shape));
        }
        dst = std::move(t);
        p.step_count = e.value("steps", int64_t{0});
    }
    return out;
}

}  // namespace denomae
