#pragma once
#include <cstdint>

#include "rangesam/kitti.hpp"

// Procedurally labeled LiDAR-like scenes (ground disc, boxes, poles,
// vegetation blobs) so the full pipeline can run without a dataset.
// Deterministic in the seed.
namespace rangesam::synthetic {

struct SceneConfig {
    int ground_points = 6000;
    int n_boxes = 5;
    int points_per_box = 600;
    int n_poles = 6;
    int points_per_pole = 200;
    int n_bushes = 4;
    int points_per_bush = 300;
    double radius = 30.0;        // scene extent in meters
    double sensor_height = 1.8;  // ground plane sits at -sensor_height
};

// train IDs used by the generator
inline constexpr std::uint8_t kGroundClass = 8;    // road
inline constexpr std::uint8_t kBoxClassA = 0;      // car
inline constexpr std::uint8_t kBoxClassB = 12;     // building
inline constexpr std::uint8_t kPoleClass = 17;     // pole
inline constexpr std::uint8_t kBushClass = 14;     // vegetation

kitti::PointCloud make_scene(std::uint64_t seed, const SceneConfig& cfg = {});

} // namespace rangesam::synthetic
