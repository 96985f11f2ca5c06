#include "rangesam/kitti.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace rangesam::kitti {

const std::vector<std::string>& class_names() {
    static const std::vector<std::string> names = {
        "car",  "bicy", "moto", "truc", "o.veh", "ped",  "b.list", "m.list", "road", "park",
        "walk", "o.gro", "build", "fenc", "veg",  "trun", "terr",  "pole",  "sign"};
    return names;
}

LabelRemap load_remap(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("remap fixture not found: " + path);
    LabelRemap remap;
    remap.train_to_name = class_names();
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        long raw, train;
        if (!(ls >> raw)) continue;  // blank line
        if (!(ls >> train))
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 'raw train' pair");
        if (raw < 0 || raw > 0xFFFF || train < 0 || (train > kNumClasses - 1 && train != kIgnore))
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": id out of range");
        remap.raw_to_train[static_cast<std::uint16_t>(raw)] = static_cast<std::uint8_t>(train);
    }
    return remap;
}

PointCloud read_scan(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("scan file not found: " + path);
    const std::streamoff len = is.tellg();
    if (len % 16 != 0)
        throw std::runtime_error("truncated scan file (length not a multiple of 16): " + path);
    const std::size_t n = static_cast<std::size_t>(len / 16);
    std::vector<float> raw(n * 4);
    is.seekg(0);
    is.read(reinterpret_cast<char*>(raw.data()), len);
    if (!is) throw std::runtime_error("read error on scan file: " + path);

    PointCloud pc;
    pc.xyz.reserve(n * 3);
    pc.remission.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float x = raw[i * 4], y = raw[i * 4 + 1], z = raw[i * 4 + 2], f = raw[i * 4 + 3];
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(f))
            continue;
        if (x == 0.f && y == 0.f && z == 0.f) continue;  // r = 0 is unprojectable
        pc.xyz.push_back(x);
        pc.xyz.push_back(y);
        pc.xyz.push_back(z);
        pc.remission.push_back(std::clamp(f, 0.f, 1.f));
    }
    return pc;
}

std::vector<std::uint8_t> read_labels(const std::string& path, const LabelRemap& remap,
                                      std::size_t n_points) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("label file not found: " + path);
    const std::streamoff len = is.tellg();
    if (len != static_cast<std::streamoff>(n_points * 4))
        throw std::runtime_error("label file length mismatch (" + std::to_string(len) +
                                 " bytes for " + std::to_string(n_points) + " points): " + path);
    std::vector<std::uint32_t> raw(n_points);
    is.seekg(0);
    is.read(reinterpret_cast<char*>(raw.data()), len);
    if (!is) throw std::runtime_error("read error on label file: " + path);
    std::vector<std::uint8_t> out(n_points);
    for (std::size_t i = 0; i < n_points; ++i)
        out[i] = remap.remap(static_cast<std::uint16_t>(raw[i] & 0xFFFFu));
    return out;
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + s + "' (expected train|val|test)");
}

std::vector<ScanEntry> sequence_split(const std::string& root, Split split) {
    const fs::path seq_root = fs::path(root) / "sequences";
    if (!fs::is_directory(seq_root))
        throw std::runtime_error("dataset root has no sequences/ directory: " + root);

    auto in_split = [split](int seq) {
        switch (split) {
            case Split::Train: return (seq >= 0 && seq <= 7) || seq == 9 || seq == 10;
            case Split::Val: return seq == 8;
            case Split::Test: return seq >= 11 && seq <= 21;
        }
        return false;
    };

    std::vector<ScanEntry> entries;
    std::vector<fs::path> seq_dirs;
    for (const auto& e : fs::directory_iterator(seq_root))
        if (e.is_directory()) seq_dirs.push_back(e.path());
    std::sort(seq_dirs.begin(), seq_dirs.end());

    for (const auto& dir : seq_dirs) {
        int seq = -1;
        try {
            seq = std::stoi(dir.filename().string());
        } catch (...) {
            continue;
        }
        if (!in_split(seq)) continue;
        const fs::path velo = dir / "velodyne";
        if (!fs::is_directory(velo)) continue;
        std::vector<fs::path> scans;
        for (const auto& f : fs::directory_iterator(velo))
            if (f.path().extension() == ".bin") scans.push_back(f.path());
        std::sort(scans.begin(), scans.end());
        for (const auto& scan : scans) {
            ScanEntry entry;
            entry.scan_path = scan.string();
            if (split != Split::Test) {
                fs::path label = dir / "labels" / scan.filename();
                label.replace_extension(".label");
                if (fs::exists(label)) entry.label_path = label.string();
            }
            entries.push_back(std::move(entry));
        }
    }
    return entries;
}

} // namespace rangesam::kitti
