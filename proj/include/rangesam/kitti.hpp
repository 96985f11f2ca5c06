#pragma once
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rangesam::kitti {

inline constexpr std::uint8_t kIgnore = 255;
inline constexpr int kNumClasses = 19;

struct PointCloud {
    std::vector<float> xyz;        // N*3, row-major
    std::vector<float> remission;  // N, clamped to [0,1]
    std::vector<std::uint8_t> labels;  // optional, train IDs or kIgnore
    std::size_t size() const { return remission.size(); }
    bool has_labels() const { return !labels.empty(); }
};

// raw SemanticKITTI class IDs -> train IDs 0..18 (or kIgnore); total map,
// unknown raw IDs resolve to kIgnore
struct LabelRemap {
    std::map<std::uint16_t, std::uint8_t> raw_to_train;
    std::vector<std::string> train_to_name;  // exactly 19 entries

    std::uint8_t remap(std::uint16_t raw) const {
        auto it = raw_to_train.find(raw);
        return it == raw_to_train.end() ? kIgnore : it->second;
    }
};

// the 19 short class names in benchmark-table order
const std::vector<std::string>& class_names();

// Parses the remap fixture: one "raw_id train_id" pair per line, '#'
// comments. A train_id of 255 marks an explicitly ignored raw class.
LabelRemap load_remap(const std::string& path);

// Reads a .bin scan (little-endian float32 x,y,z,remission quadruples).
// Non-finite points and points with zero range are dropped; remission is
// clamped to [0,1].
PointCloud read_scan(const std::string& path);

// Reads a .label file (little-endian uint32, lower 16 bits semantic) and
// remaps to train IDs. Throws on length mismatch against n_points.
std::vector<std::uint8_t> read_labels(const std::string& path, const LabelRemap& remap,
                                      std::size_t n_points);

struct ScanEntry {
    std::string scan_path;
    std::optional<std::string> label_path;
};

enum class Split { Train, Val, Test };

Split parse_split(const std::string& s);

// Scans root/sequences/NN/velodyne for the requested split.
// train = 00-07, 09-10; val = 08; test = 11-21 (no label paths).
// Deterministic lexicographic ordering.
std::vector<ScanEntry> sequence_split(const std::string& root, Split split);

} // namespace rangesam::kitti
