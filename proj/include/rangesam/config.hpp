#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rangesam/augment.hpp"
#include "rangesam/model.hpp"
#include "rangesam/optim.hpp"
#include "rangesam/projection.hpp"

// Run configuration: a single JSON file plus dot-path flag overrides
// ("optimizer.backbone.lr=0.001"). RANGESAM_DATA_ROOT overrides the
// default dataset root.
namespace rangesam::config {

struct RunConfig {
    proj::ProjectionConfig projection;
    model::ModelConfig model;
    optim::GroupConfig backbone{4e-4, 1e-3};
    optim::GroupConfig head{1e-3, 1e-4};

    int epochs = 60;
    double warmup_fraction = 5.0 / 60.0;
    int batch_size = 1;
    int steps_per_epoch = 0;  // 0 = one pass over the sample set

    std::array<double, 4> lambda{1.0, 1.0, 1.0, 1.0};
    double aux_weight = 0.4;

    augment::AugConfig aug;
    bool aug_enabled = true;

    std::string data_root;
    std::string split = "train";
    std::string remap_path = "configs/semantic-kitti-remap.txt";
    std::string palette_path = "configs/palette.txt";
    std::string out_dir = "runs/default";

    bool synthetic = false;
    int synthetic_scenes = 8;
    std::uint64_t seed = 1;

    void validate() const;
    // keep raster and model input dims coherent
    void sync_input_dims();
};

// empty path = defaults only; overrides are "dot.path=value" strings
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// canonical desk-scale setup: toy model, matching raster dims
void apply_toy_preset(RunConfig& cfg);

std::string to_json(const RunConfig& cfg);

} // namespace rangesam::config
