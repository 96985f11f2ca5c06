#include "rangesam/projection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rangesam::proj {

void ProjectionConfig::validate() const {
    if (height < 1 || width < 2)
        throw std::invalid_argument("projection config: need height >= 1, width >= 2");
    if (fov_total() <= 0.0) throw std::invalid_argument("projection config: fov_up + fov_down must be > 0");
}

SphericalCoords spherical_coords(float x, float y, float z) {
    const double r = std::sqrt(double(x) * x + double(y) * y + double(z) * z);
    if (r <= 0.0) throw std::invalid_argument("spherical_coords: zero-range point");
    return {std::atan2(double(y), double(x)), std::asin(double(z) / r), r};
}

PixelCoord project_point(float x, float y, float z, const ProjectionConfig& cfg) {
    const SphericalCoords sc = spherical_coords(x, y, z);
    const double uf = 0.5 * (1.0 - sc.theta / kPi) * cfg.width;
    const double vf = (1.0 - (sc.phi + cfg.fov_up) / cfg.fov_total()) * cfg.height;
    int u = static_cast<int>(std::floor(uf));
    int v = static_cast<int>(std::floor(vf));
    u = std::clamp(u, 0, cfg.width - 1);
    v = std::clamp(v, 0, cfg.height - 1);
    return {u, v};
}

RangeImage rasterize(const kitti::PointCloud& pc, const ProjectionConfig& cfg) {
    cfg.validate();
    RangeImage img;
    img.height = cfg.height;
    img.width = cfg.width;
    const std::size_t hw = static_cast<std::size_t>(cfg.height) * cfg.width;
    img.channels.assign(static_cast<std::size_t>(kNumChannels) * hw, 0.f);
    img.pixel_point.assign(hw, kEmpty);
    img.point_pixel.resize(pc.size());

    // winner ranges tracked separately so ties resolve by point index
    std::vector<double> best_r(hw, 0.0);

    for (std::size_t i = 0; i < pc.size(); ++i) {
        const float x = pc.xyz[i * 3], y = pc.xyz[i * 3 + 1], z = pc.xyz[i * 3 + 2];
        const PixelCoord px = project_point(x, y, z, cfg);
        img.point_pixel[i] = {px.v, px.u};
        const double r = std::sqrt(double(x) * x + double(y) * y + double(z) * z);
        const std::size_t p = static_cast<std::size_t>(px.v) * cfg.width + px.u;
        if (img.pixel_point[p] == kEmpty || r < best_r[p]) {
            img.pixel_point[p] = static_cast<std::int32_t>(i);
            best_r[p] = r;
        }
    }

    for (std::size_t p = 0; p < hw; ++p) {
        const std::int32_t i = img.pixel_point[p];
        if (i == kEmpty) continue;
        const int v = static_cast<int>(p) / cfg.width;
        const int u = static_cast<int>(p) % cfg.width;
        img.at(ChRange, v, u) = static_cast<float>(best_r[p]);
        img.at(ChX, v, u) = pc.xyz[static_cast<std::size_t>(i) * 3];
        img.at(ChY, v, u) = pc.xyz[static_cast<std::size_t>(i) * 3 + 1];
        img.at(ChZ, v, u) = pc.xyz[static_cast<std::size_t>(i) * 3 + 2];
        img.at(ChRemission, v, u) = pc.remission[static_cast<std::size_t>(i)];
        img.at(ChValid, v, u) = 1.f;
    }

    if (pc.has_labels()) {
        img.labels.assign(hw, kitti::kIgnore);
        for (std::size_t p = 0; p < hw; ++p)
            if (img.pixel_point[p] != kEmpty)
                img.labels[p] = pc.labels[static_cast<std::size_t>(img.pixel_point[p])];
    }
    return img;
}

std::vector<std::uint8_t> backproject_labels(const std::vector<std::uint8_t>& img_labels,
                                             const RangeImage& img, const kitti::PointCloud& pc,
                                             int k, int window) {
    if (k < 1) throw std::invalid_argument("backproject_labels: k must be >= 1");
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("backproject_labels: window must be odd and >= 1");
    if (img_labels.size() != static_cast<std::size_t>(img.height) * img.width)
        throw std::invalid_argument("backproject_labels: label raster dimension mismatch");
    if (img.point_pixel.size() != pc.size())
        throw std::invalid_argument("backproject_labels: point count mismatch");

    const int half = window / 2;
    std::vector<std::uint8_t> out(pc.size(), kitti::kIgnore);

    struct Candidate {
        double dr;
        int order;  // scanline order within the window
        std::uint8_t label;
    };
    std::vector<Candidate> cands;
    cands.reserve(static_cast<std::size_t>(window) * window);

    for (std::size_t i = 0; i < pc.size(); ++i) {
        const int v0 = img.point_pixel[i][0], u0 = img.point_pixel[i][1];
        const float x = pc.xyz[i * 3], y = pc.xyz[i * 3 + 1], z = pc.xyz[i * 3 + 2];
        const double rp = std::sqrt(double(x) * x + double(y) * y + double(z) * z);

        cands.clear();
        int order = 0;
        for (int dv = -half; dv <= half; ++dv) {
            const int v = v0 + dv;
            if (v < 0 || v >= img.height) continue;
            for (int du = -half; du <= half; ++du) {
                const int u = u0 + du;
                if (u < 0 || u >= img.width) continue;
                if (!img.valid(v, u)) continue;
                cands.push_back({std::abs(img.at(ChRange, v, u) - rp), order++,
                                 img_labels[static_cast<std::size_t>(v) * img.width + u]});
            }
        }

        if (cands.empty()) {
            out[i] = img.valid(v0, u0) ? img_labels[static_cast<std::size_t>(v0) * img.width + u0]
                                       : kitti::kIgnore;
            continue;
        }

        const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(kk), cands.end(),
                          [](const Candidate& a, const Candidate& b) {
                              if (a.dr != b.dr) return a.dr < b.dr;
                              return a.order < b.order;
                          });

        // majority vote over the k nearest; on ties the tied label whose
        // best candidate ranks first wins
        int counts[20] = {0};   // 19 classes + slot for kIgnore votes
        int first_rank[20];
        std::fill(std::begin(first_rank), std::end(first_rank), 1 << 30);
        for (std::size_t j = 0; j < kk; ++j) {
            const int slot = cands[j].label == kitti::kIgnore ? 19 : cands[j].label;
            ++counts[slot];
            first_rank[slot] = std::min(first_rank[slot], static_cast<int>(j));
        }
        int best_slot = -1;
        for (int s = 0; s < 20; ++s) {
            if (counts[s] == 0) continue;
            if (best_slot < 0 || counts[s] > counts[best_slot] ||
                (counts[s] == counts[best_slot] && first_rank[s] < first_rank[best_slot]))
                best_slot = s;
        }
        out[i] = best_slot == 19 ? kitti::kIgnore : static_cast<std::uint8_t>(best_slot);
    }
    return out;
}

Palette load_palette(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("palette fixture not found: " + path);
    Palette pal;
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        int id, r, g, b;
        if (!(ls >> id)) continue;
        if (!(ls >> r >> g >> b) || id < 0 || id >= 19)
            throw std::runtime_error("bad palette line: " + line);
        pal.rgb[static_cast<std::size_t>(id)] = {static_cast<std::uint8_t>(r),
                                                 static_cast<std::uint8_t>(g),
                                                 static_cast<std::uint8_t>(b)};
    }
    return pal;
}

namespace {
void write_ppm(const std::string& path, int height, int width,
               const std::vector<std::uint8_t>& rgb) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write image: " + path);
    os << "P6\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}
} // namespace

void write_range_ppm(const std::string& path, const RangeImage& img) {
    float max_r = 1.f;
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    for (std::size_t p = 0; p < hw; ++p)
        max_r = std::max(max_r, img.channels[p]);
    std::vector<std::uint8_t> rgb(hw * 3, 0);
    for (std::size_t p = 0; p < hw; ++p) {
        if (img.channels[static_cast<std::size_t>(ChValid) * hw + p] == 0.f) continue;
        const auto g = static_cast<std::uint8_t>(255.f * img.channels[p] / max_r);
        rgb[p * 3] = rgb[p * 3 + 1] = rgb[p * 3 + 2] = g;
    }
    write_ppm(path, img.height, img.width, rgb);
}

void write_label_ppm(const std::string& path, const std::vector<std::uint8_t>& labels, int height,
                     int width, const Palette& palette) {
    const std::size_t hw = static_cast<std::size_t>(height) * width;
    if (labels.size() != hw) throw std::invalid_argument("write_label_ppm: size mismatch");
    std::vector<std::uint8_t> rgb(hw * 3, 0);
    for (std::size_t p = 0; p < hw; ++p) {
        if (labels[p] >= 19) continue;  // ignore / invalid stays black
        const auto& c = palette.rgb[labels[p]];
        rgb[p * 3] = c[0];
        rgb[p * 3 + 1] = c[1];
        rgb[p * 3 + 2] = c[2];
    }
    write_ppm(path, height, width, rgb);
}

void write_raster_dump(const std::string& path, const RangeImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write raster dump: " + path);
    const std::int32_t header[3] = {kNumChannels, img.height, img.width};
    os.write(reinterpret_cast<const char*>(header), sizeof(header));
    os.write(reinterpret_cast<const char*>(img.channels.data()),
             static_cast<std::streamsize>(img.channels.size() * sizeof(float)));
    if (!os) throw std::runtime_error("write failed: " + path);
}

} // namespace rangesam::proj
