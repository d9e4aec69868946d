#include <bit>
#include <cstring>
#include <fstream>

#include "denomae/tensor.hpp"

namespace denomae {

namespace {

constexpr char kMagic[8] = {'D', 'T', 'N', 'S', 'R', '1', '\0', '\0'};

void put_u32le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint64_t get_u64le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace

void append_tensor_bytes(const Tensor& t, std::string& out) {
    out.append(kMagic, sizeof(kMagic));
    put_u32le(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u64le(out, static_cast<uint64_t>(d));
    for (float f : t.data) put_u32le(out, std::bit_cast<uint32_t>(f));
}

Tensor parse_tensor_bytes(const char* data, size_t size, size_t& consumed) {
    const auto* p = reinterpret_cast<const unsigned char*>(data);
    if (size < sizeof(kMagic) + 4 || std::memcmp(p, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("tensor payload: bad magic");
    }
    size_t off = sizeof(kMagic);
    const uint32_t rank = get_u32le(p + off);
    off += 4;
    if (rank > 8) throw DataError("tensor payload: rank " + std::to_string(rank) + " exceeds 8");
    if (size < off + 8ull * rank) throw DataError("tensor payload: truncated dims");
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint64_t d = get_u64le(p + off);
        off += 8;
        if (d == 0 || d > (1ull << 31)) throw DataError("tensor payload: bad dim");
        shape[i] = static_cast<int>(d);
        n *= shape[i];
        if (n > (1ll << 33)) throw DataError("tensor payload: too large");
    }
    if (size < off + 4ull * n) throw DataError("tensor payload: truncated data");
    Tensor t(shape);
    for (int64_t i = 0; i < n; ++i) {
        t.data[i] = std::bit_cast<float>(get_u32le(p + off));
        off += 4;
    }
    consumed = off;
    return t;
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    std::string bytes;
    bytes.reserve(16 + 8 * t.shape.size() + 4 * t.data.size());
    append_tensor_bytes(t, bytes);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    size_t consumed = 0;
    Tensor t = parse_tensor_bytes(bytes.data(), bytes.size(), consumed);
    if (consumed != bytes.size()) {
        throw DataError("tensor file has trailing bytes: " + path.string());
    }
    if (!all_finite(t)) throw DataError("tensor file has non-finite values: " + path.string());
    return t;
}

}  // namespace denomae
