#pragma once
#include <cstdint>
#include <vector>

#include "rangesam/kitti.hpp"
#include "rangesam/projection.hpp"
#include "rangesam/rng.hpp"

// 3-d point-cloud augmentations (applied before projection) and
// range-view raster augmentations (applied after). Everything is a pure
// function of (inputs, rng state); validity=0 <=> label=IGNORE holds
// after every op.
namespace rangesam::augment {

struct AugConfig {
    // 3-d ops
    double p_rotate = 1.0;
    double p_jitter = 1.0;
    double p_flip = 1.0;
    double p_drop = 1.0;
    double jitter_sigma = 0.01;  // meters
    double jitter_clip = 0.05;   // meters
    double drop_max = 0.1;       // max fraction of points removed

    // range-view ops
    double p_mix = 0.9;
    double p_union = 0.1;
    double p_shift = 0.9;
    double p_paste = 1.0;
    int mix_sectors = 4;
    std::vector<std::uint8_t> paste_classes;  // rare train IDs transplanted by range_paste

    void validate() const;
};

// rotation about z by U[0,2pi); clipped Gaussian xyz jitter; independent
// x / y sign flips (each 1/2 when the flip op triggers); uniform drop of
// up to drop_max of the points. Labels follow their points.
kitti::PointCloud augment3d(const kitti::PointCloud& pc, const AugConfig& cfg, Rng& rng);

// width axis cut into `sectors` equal column bands; a uniformly random
// subset of bands is replaced by b's bands (channels, labels, validity
// and point bookkeeping move together)
proj::RangeImage range_mix(const proj::RangeImage& a, const proj::RangeImage& b, int sectors,
                           Rng& rng);

// a's invalid pixels filled from b's valid pixels
proj::RangeImage range_union(const proj::RangeImage& a, const proj::RangeImage& b);

// cyclic rotation of all rasters along the width axis by a uniform offset
proj::RangeImage range_shift(const proj::RangeImage& a, Rng& rng);
proj::RangeImage range_shift_by(const proj::RangeImage& a, int offset);

// pixels of b whose label is in `classes` overwrite a
proj::RangeImage range_paste(const proj::RangeImage& a, const proj::RangeImage& b,
                             const std::vector<std::uint8_t>& classes);

// full range-view stage: mix, union, shift, paste, each gated by its
// probability; b supplies the donor raster
proj::RangeImage apply_range_augs(const proj::RangeImage& a, const proj::RangeImage& b,
                                  const AugConfig& cfg, Rng& rng);

} // namespace rangesam::augment
