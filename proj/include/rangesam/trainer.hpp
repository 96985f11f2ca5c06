#pragma once
#include <memory>
#include <string>
#include <vector>

#include "rangesam/config.hpp"
#include "rangesam/losses.hpp"
#include "rangesam/model.hpp"
#include "rangesam/projection.hpp"

// Training / evaluation driver shared by the CLI and the tests.
namespace rangesam::trainer {

// normalized [1,6,H,W] network input from a raster
ad::Tensor<float> raster_to_tensor(const proj::RangeImage& img);

struct Sample {
    kitti::PointCloud cloud;
    proj::RangeImage raster;  // un-augmented projection of `cloud`
};

// synthetic scenes or a SemanticKITTI split, already rasterized
std::vector<Sample> load_samples(const config::RunConfig& cfg, std::size_t limit = 0);

// class frequency over non-ignore raster pixels -> loss weights
losses::ClassWeights weights_from_samples(const std::vector<Sample>& samples);

struct TrainOptions {
    int max_steps = 0;          // 0 = epochs * steps_per_epoch from the config
    int eval_every = 0;         // pixel-mIoU probes on the training set (0 = off)
    double stop_at_miou = -1.0; // early stop threshold when eval_every > 0
    bool quiet = false;
    std::string resume_path;    // checkpoint to continue from
};

struct TrainResult {
    std::vector<double> step_losses;
    double final_pixel_miou = -1.0;  // only set when eval_every > 0
    int steps_run = 0;
    std::string final_checkpoint;
};

TrainResult train(const config::RunConfig& cfg, const TrainOptions& opt = {});

// pixel-level mIoU of the model's argmax raster vs raster labels
double pixel_miou(model::RangeSamModel<float>& net, const std::vector<Sample>& samples);

struct EvalResult {
    losses::MiouResult metrics;
    std::string table;
    std::string json;
};

// rasterize -> forward -> argmax -> k-NN back-projection -> point-level
// confusion matrix
EvalResult evaluate(const config::RunConfig& cfg, const std::string& checkpoint_path, int knn_k = 7,
                    std::size_t limit = 0);

// checkpoint round trip for a live model + optimizer state
void save_training_state(const std::string& path, model::RangeSamModel<float>& net,
                         optim::AdamW<float>& opt, std::int64_t step, int epoch);
// returns the stored step count; epoch written through `epoch` when non-null
std::int64_t load_training_state(const std::string& path, model::RangeSamModel<float>& net,
                                 optim::AdamW<float>* opt, int* epoch);
void load_model_weights(const std::string& path, model::RangeSamModel<float>& net);

// parameter-count report; flags that published totals for this
// architecture disagree instead of asserting either figure
std::string parameter_report(const config::RunConfig& cfg);

} // namespace rangesam::trainer
