#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rangesam/kitti.hpp"

namespace rangesam::proj {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr std::int32_t kEmpty = -1;

struct ProjectionConfig {
    int height = 64;
    int width = 2048;
    double fov_up = 3.0 * kPi / 180.0;     // radians above horizon
    double fov_down = 25.0 * kPi / 180.0;  // radians below horizon, positive magnitude

    double fov_total() const { return fov_up + fov_down; }
    void validate() const;
};

struct SphericalCoords {
    double theta;  // azimuth, atan2(y,x), (-pi, pi]
    double phi;    // elevation, asin(z/r)
    double r;      // range
};

SphericalCoords spherical_coords(float x, float y, float z);

struct PixelCoord {
    int u;  // column
    int v;  // row
};

PixelCoord project_point(float x, float y, float z, const ProjectionConfig& cfg);

// channel plane indices in RangeImage::channels
enum Channel { ChRange = 0, ChX, ChY, ChZ, ChRemission, ChValid, kNumChannels };

struct RangeImage {
    int height = 0;
    int width = 0;
    std::vector<float> channels;              // kNumChannels * H * W
    std::vector<std::int32_t> pixel_point;    // H*W, winner point index or kEmpty
    std::vector<std::array<std::int32_t, 2>> point_pixel;  // per point (v,u)
    std::vector<std::uint8_t> labels;         // H*W, winner train ID or kIgnore (when source labeled)

    float& at(int ch, int v, int u) {
        return channels[(static_cast<std::size_t>(ch) * height + v) * width + u];
    }
    float at(int ch, int v, int u) const {
        return channels[(static_cast<std::size_t>(ch) * height + v) * width + u];
    }
    bool valid(int v, int u) const { return at(ChValid, v, u) != 0.f; }
    bool has_labels() const { return !labels.empty(); }
};

// Min-range rasterization: per pixel the smallest-r point wins, ties
// broken by lower point index. Losing points still record their pixel in
// point_pixel. Unprojected pixels are zero in all channels, kEmpty in
// pixel_point and kIgnore in labels.
RangeImage rasterize(const kitti::PointCloud& pc, const ProjectionConfig& cfg);

// k-NN label propagation from a predicted label raster back to points.
// Candidates are the valid pixels in a window x window neighborhood of
// each point's pixel, ranked by |r_pixel - r_point| with scanline-order
// tie-break; majority vote over the k nearest, vote ties resolved toward
// the tied label whose best candidate is nearest.
std::vector<std::uint8_t> backproject_labels(const std::vector<std::uint8_t>& img_labels,
                                             const RangeImage& img, const kitti::PointCloud& pc,
                                             int k = 7, int window = 7);

// PPM (P6) emission
struct Palette {
    std::array<std::array<std::uint8_t, 3>, 19> rgb{};
};

Palette load_palette(const std::string& path);

void write_range_ppm(const std::string& path, const RangeImage& img);
void write_label_ppm(const std::string& path, const std::vector<std::uint8_t>& labels, int height,
                     int width, const Palette& palette);

// raw raster dump: all channel planes as float32 after a small header
void write_raster_dump(const std::string& path, const RangeImage& img);

} // namespace rangesam::proj
