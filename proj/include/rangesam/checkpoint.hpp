#pragma once
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangesam/tensor.hpp"

// Flat checkpoint archive: "RSCK" magic + version, then
// (name, shape, little-endian float32 buffer) records. Round trips are
// bit-exact for float32 data.
namespace rangesam::checkpoint {

struct Record {
    std::string name;
    ad::Shape shape;
    std::vector<float> data;
};

namespace detail {
inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
} // namespace detail

inline constexpr std::uint32_t kVersion = 1;

inline void save(const std::string& path, const std::vector<Record>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write("RSCK", 4);
    detail::write_u32(os, kVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        detail::write_u32(os, static_cast<std::uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(r.shape.size()));
        for (int d : r.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
        // float32 little-endian payload; this build targets LE hosts
        static_assert(sizeof(float) == 4);
        os.write(reinterpret_cast<const char*>(r.data.data()),
                 static_cast<std::streamsize>(r.data.size() * 4));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline std::vector<Record> load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RSCK", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = detail::read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = detail::read_u32(is);
    std::vector<Record> records(count);
    for (auto& r : records) {
        const std::uint32_t name_len = detail::read_u32(is);
        r.name.resize(name_len);
        is.read(r.name.data(), name_len);
        const std::uint32_t ndim = detail::read_u32(is);
        r.shape.resize(ndim);
        std::int64_t numel = 1;
        for (auto& d : r.shape) {
            d = static_cast<int>(detail::read_u32(is));
            numel *= d;
        }
        r.data.resize(static_cast<std::size_t>(numel));
        is.read(reinterpret_cast<char*>(r.data.data()), numel * 4);
        if (!is) throw std::runtime_error("checkpoint: truncated record in " + path);
    }
    return records;
}

inline std::map<std::string, Record> load_map(const std::string& path) {
    std::map<std::string, Record> out;
    for (auto& r : load(path)) out[r.name] = std::move(r);
    return out;
}

} // namespace rangesam::checkpoint
