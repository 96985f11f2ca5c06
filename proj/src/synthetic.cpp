#include "rangesam/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "rangesam/rng.hpp"

namespace rangesam::synthetic {

namespace {

void push(kitti::PointCloud& pc, double x, double y, double z, double rem, std::uint8_t label) {
    pc.xyz.push_back(static_cast<float>(x));
    pc.xyz.push_back(static_cast<float>(y));
    pc.xyz.push_back(static_cast<float>(z));
    pc.remission.push_back(static_cast<float>(std::clamp(rem, 0.0, 1.0)));
    pc.labels.push_back(label);
}

} // namespace

kitti::PointCloud make_scene(std::uint64_t seed, const SceneConfig& cfg) {
    Rng rng(seed);
    kitti::PointCloud pc;

    // ground: annulus around the sensor, denser near the center like a
    // real sweep (sqrt-free: sample radius linearly, which over-weights
    // the far field slightly -- fine for a synthetic target)
    for (int i = 0; i < cfg.ground_points; ++i) {
        const double r = 2.0 + rng.uniform() * (cfg.radius - 2.0);
        const double a = rng.uniform() * 2.0 * 3.14159265358979323846;
        push(pc, r * std::cos(a), r * std::sin(a), -cfg.sensor_height + rng.normal() * 0.02,
             0.2 + 0.1 * rng.uniform(), kGroundClass);
    }

    // boxes: axis-aligned cuboids, points on the surface
    for (int b = 0; b < cfg.n_boxes; ++b) {
        const double cx = rng.uniform(-0.7, 0.7) * cfg.radius;
        const double cy = rng.uniform(-0.7, 0.7) * cfg.radius;
        const bool big = rng.bernoulli(0.4);
        const double sx = big ? rng.uniform(4.0, 8.0) : rng.uniform(1.5, 2.5);
        const double sy = big ? rng.uniform(4.0, 8.0) : rng.uniform(3.5, 5.0);
        const double sz = big ? rng.uniform(4.0, 7.0) : rng.uniform(1.4, 1.9);
        const std::uint8_t label = big ? kBoxClassB : kBoxClassA;
        for (int i = 0; i < cfg.points_per_box; ++i) {
            // pick a face, sample uniformly on it
            const int face = static_cast<int>(rng.uniform_int(5));  // 4 sides + top
            double x = rng.uniform(-0.5, 0.5) * sx;
            double y = rng.uniform(-0.5, 0.5) * sy;
            double z = rng.uniform(0.0, 1.0) * sz;
            switch (face) {
                case 0: x = -0.5 * sx; break;
                case 1: x = 0.5 * sx; break;
                case 2: y = -0.5 * sy; break;
                case 3: y = 0.5 * sy; break;
                default: z = sz; break;
            }
            push(pc, cx + x, cy + y, -cfg.sensor_height + z, 0.5 + 0.2 * rng.uniform(), label);
        }
    }

    // poles: thin vertical cylinders
    for (int p = 0; p < cfg.n_poles; ++p) {
        const double cx = rng.uniform(-0.8, 0.8) * cfg.radius;
        const double cy = rng.uniform(-0.8, 0.8) * cfg.radius;
        const double height = rng.uniform(3.0, 6.0);
        for (int i = 0; i < cfg.points_per_pole; ++i) {
            const double a = rng.uniform() * 2.0 * 3.14159265358979323846;
            push(pc, cx + 0.08 * std::cos(a), cy + 0.08 * std::sin(a),
                 -cfg.sensor_height + rng.uniform() * height, 0.7 + 0.2 * rng.uniform(),
                 kPoleClass);
        }
    }

    // vegetation: fuzzy ellipsoidal blobs
    for (int b = 0; b < cfg.n_bushes; ++b) {
        const double cx = rng.uniform(-0.8, 0.8) * cfg.radius;
        const double cy = rng.uniform(-0.8, 0.8) * cfg.radius;
        const double rx = rng.uniform(1.0, 2.5), rz = rng.uniform(1.0, 3.0);
        for (int i = 0; i < cfg.points_per_bush; ++i)
            push(pc, cx + rng.normal() * rx, cy + rng.normal() * rx,
                 -cfg.sensor_height + 0.5 + std::abs(rng.normal()) * rz,
                 0.3 + 0.3 * rng.uniform(), kBushClass);
    }

    return pc;
}

} // namespace rangesam::synthetic
