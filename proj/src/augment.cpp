#include "rangesam/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rangesam::augment {

namespace {

void check_prob(double p, const char* name) {
    if (p < 0.0 || p > 1.0)
        throw std::invalid_argument(std::string("augment config: ") + name + " must be in [0,1]");
}

void check_dims(const proj::RangeImage& a, const proj::RangeImage& b, const char* op) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument(std::string(op) + ": raster dimension mismatch");
}

// transplants one column from src into dst: all channel planes, label,
// pixel bookkeeping. Donor point indices are meaningless in the target
// cloud, so transplanted pixels lose their point link.
void move_column(proj::RangeImage& dst, const proj::RangeImage& src, int u) {
    const std::size_t hw = static_cast<std::size_t>(dst.height) * dst.width;
    for (int ch = 0; ch < proj::kNumChannels; ++ch)
        for (int v = 0; v < dst.height; ++v)
            dst.channels[(static_cast<std::size_t>(ch) * dst.height + v) * dst.width + u] =
                src.channels[(static_cast<std::size_t>(ch) * src.height + v) * src.width + u];
    (void)hw;
    for (int v = 0; v < dst.height; ++v) {
        const std::size_t p = static_cast<std::size_t>(v) * dst.width + u;
        dst.pixel_point[p] = proj::kEmpty;
        if (!dst.labels.empty())
            dst.labels[p] = src.labels.empty() ? kitti::kIgnore : src.labels[p];
    }
}

void move_pixel(proj::RangeImage& dst, const proj::RangeImage& src, int v, int u) {
    for (int ch = 0; ch < proj::kNumChannels; ++ch)
        dst.channels[(static_cast<std::size_t>(ch) * dst.height + v) * dst.width + u] =
            src.channels[(static_cast<std::size_t>(ch) * src.height + v) * src.width + u];
    const std::size_t p = static_cast<std::size_t>(v) * dst.width + u;
    dst.pixel_point[p] = proj::kEmpty;
    if (!dst.labels.empty())
        dst.labels[p] = src.labels.empty() ? kitti::kIgnore : src.labels[p];
}

} // namespace

void AugConfig::validate() const {
    check_prob(p_rotate, "p_rotate");
    check_prob(p_jitter, "p_jitter");
    check_prob(p_flip, "p_flip");
    check_prob(p_drop, "p_drop");
    check_prob(p_mix, "p_mix");
    check_prob(p_union, "p_union");
    check_prob(p_shift, "p_shift");
    check_prob(p_paste, "p_paste");
    if (jitter_sigma < 0.0 || jitter_clip < 0.0)
        throw std::invalid_argument("augment config: jitter parameters must be non-negative");
    if (drop_max < 0.0 || drop_max > 1.0)
        throw std::invalid_argument("augment config: drop_max must be in [0,1]");
    if (mix_sectors < 1) throw std::invalid_argument("augment config: mix_sectors must be >= 1");
    for (auto c : paste_classes)
        if (c >= kitti::kNumClasses)
            throw std::invalid_argument("augment config: paste class out of range");
}

kitti::PointCloud augment3d(const kitti::PointCloud& pc, const AugConfig& cfg, Rng& rng) {
    cfg.validate();
    kitti::PointCloud out = pc;

    if (rng.uniform() < cfg.p_rotate) {
        const double ang = rng.uniform() * 2.0 * proj::kPi;
        const float ca = static_cast<float>(std::cos(ang));
        const float sa = static_cast<float>(std::sin(ang));
        for (std::size_t i = 0; i < out.size(); ++i) {
            const float x = out.xyz[i * 3], y = out.xyz[i * 3 + 1];
            out.xyz[i * 3] = ca * x - sa * y;
            out.xyz[i * 3 + 1] = sa * x + ca * y;
        }
    }

    if (rng.uniform() < cfg.p_jitter && cfg.jitter_sigma > 0.0) {
        for (auto& v : out.xyz) {
            double d = rng.normal() * cfg.jitter_sigma;
            d = std::clamp(d, -cfg.jitter_clip, cfg.jitter_clip);
            v += static_cast<float>(d);
        }
    }

    if (rng.uniform() < cfg.p_flip) {
        const bool fx = rng.uniform() < 0.5;
        const bool fy = rng.uniform() < 0.5;
        if (fx || fy) {
            for (std::size_t i = 0; i < out.size(); ++i) {
                if (fx) out.xyz[i * 3] = -out.xyz[i * 3];
                if (fy) out.xyz[i * 3 + 1] = -out.xyz[i * 3 + 1];
            }
        }
    }

    if (rng.uniform() < cfg.p_drop && cfg.drop_max > 0.0 && out.size() > 0) {
        const double frac = rng.uniform() * cfg.drop_max;
        kitti::PointCloud kept;
        kept.xyz.reserve(out.xyz.size());
        kept.remission.reserve(out.remission.size());
        if (out.has_labels()) kept.labels.reserve(out.labels.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (rng.uniform() < frac) continue;
            kept.xyz.insert(kept.xyz.end(), out.xyz.begin() + static_cast<std::ptrdiff_t>(i * 3),
                            out.xyz.begin() + static_cast<std::ptrdiff_t>(i * 3 + 3));
            kept.remission.push_back(out.remission[i]);
            if (out.has_labels()) kept.labels.push_back(out.labels[i]);
        }
        out = std::move(kept);
    }
    return out;
}

proj::RangeImage range_mix(const proj::RangeImage& a, const proj::RangeImage& b, int sectors,
                           Rng& rng) {
    check_dims(a, b, "range_mix");
    if (sectors < 1 || sectors > a.width)
        throw std::invalid_argument("range_mix: bad sector count");
    proj::RangeImage out = a;
    for (int s = 0; s < sectors; ++s) {
        if (rng.uniform() >= 0.5) continue;
        const int u0 = static_cast<int>(static_cast<std::int64_t>(s) * a.width / sectors);
        const int u1 = static_cast<int>(static_cast<std::int64_t>(s + 1) * a.width / sectors);
        for (int u = u0; u < u1; ++u) move_column(out, b, u);
    }
    return out;
}

proj::RangeImage range_union(const proj::RangeImage& a, const proj::RangeImage& b) {
    check_dims(a, b, "range_union");
    proj::RangeImage out = a;
    for (int v = 0; v < a.height; ++v)
        for (int u = 0; u < a.width; ++u)
            if (!a.valid(v, u) && b.valid(v, u)) move_pixel(out, b, v, u);
    return out;
}

proj::RangeImage range_shift_by(const proj::RangeImage& a, int offset) {
    const int w = a.width;
    offset = ((offset % w) + w) % w;
    if (offset == 0) return a;
    proj::RangeImage out = a;
    for (int ch = 0; ch < proj::kNumChannels; ++ch)
        for (int v = 0; v < a.height; ++v) {
            const std::size_t row = (static_cast<std::size_t>(ch) * a.height + v) * w;
            for (int u = 0; u < w; ++u)
                out.channels[row + (u + offset) % w] = a.channels[row + u];
        }
    for (int v = 0; v < a.height; ++v) {
        const std::size_t row = static_cast<std::size_t>(v) * w;
        for (int u = 0; u < w; ++u) {
            out.pixel_point[row + (u + offset) % w] = a.pixel_point[row + u];
            if (!a.labels.empty()) out.labels[row + (u + offset) % w] = a.labels[row + u];
        }
    }
    for (auto& vu : out.point_pixel) vu[1] = (vu[1] + offset) % w;
    return out;
}

proj::RangeImage range_shift(const proj::RangeImage& a, Rng& rng) {
    return range_shift_by(a, static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(a.width))));
}

proj::RangeImage range_paste(const proj::RangeImage& a, const proj::RangeImage& b,
                             const std::vector<std::uint8_t>& classes) {
    check_dims(a, b, "range_paste");
    proj::RangeImage out = a;
    if (classes.empty() || b.labels.empty()) return out;
    for (int v = 0; v < a.height; ++v)
        for (int u = 0; u < a.width; ++u) {
            const std::uint8_t lb = b.labels[static_cast<std::size_t>(v) * a.width + u];
            if (!b.valid(v, u)) continue;
            if (std::find(classes.begin(), classes.end(), lb) == classes.end()) continue;
            move_pixel(out, b, v, u);
        }
    return out;
}

proj::RangeImage apply_range_augs(const proj::RangeImage& a, const proj::RangeImage& b,
                                  const AugConfig& cfg, Rng& rng) {
    cfg.validate();
    check_dims(a, b, "apply_range_augs");
    proj::RangeImage out = a;
    if (rng.uniform() < cfg.p_mix) out = range_mix(out, b, cfg.mix_sectors, rng);
    if (rng.uniform() < cfg.p_union) out = range_union(out, b);
    if (rng.uniform() < cfg.p_shift) out = range_shift(out, rng);
    if (rng.uniform() < cfg.p_paste) out = range_paste(out, b, cfg.paste_classes);
    return out;
}

} // namespace rangesam::augment
