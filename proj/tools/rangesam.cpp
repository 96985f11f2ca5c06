#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rangesam/config.hpp"
#include "rangesam/gradcheck.hpp"
#include "rangesam/kitti.hpp"
#include "rangesam/projection.hpp"
#include "rangesam/synthetic.hpp"
#include "rangesam/trainer.hpp"

namespace {

using namespace rangesam;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    bool toy = false;
    bool synthetic = false;
    std::uint64_t seed = 0;  // 0 = keep config value
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "run config (JSON)");
    cmd->add_option("-D,--set", args.overrides, "dot-path config override, e.g. optimizer.head.lr=0.002");
    cmd->add_flag("--toy", args.toy, "desk-scale model preset (16x256 raster)");
    cmd->add_flag("--synthetic", args.synthetic, "procedural scenes instead of a dataset");
    cmd->add_option("--seed", args.seed, "run seed override");
}

config::RunConfig build_config(const CommonArgs& args) {
    std::vector<std::string> ov = args.overrides;
    if (args.toy) ov.insert(ov.begin(), "toy=true");
    if (args.synthetic) ov.push_back("data.synthetic=true");
    if (args.seed) ov.push_back("seed=" + std::to_string(args.seed));
    return config::load_run_config(args.config_path, ov);
}

int run_project(const CommonArgs& args, const std::string& scan_path,
                const std::string& label_path, const std::string& out_prefix) {
    config::RunConfig cfg = build_config(args);
    kitti::PointCloud pc;
    if (!scan_path.empty()) {
        pc = kitti::read_scan(scan_path);
        if (!label_path.empty()) {
            const kitti::LabelRemap remap = kitti::load_remap(cfg.remap_path);
            pc.labels = kitti::read_labels(label_path, remap, pc.size());
        }
    } else if (cfg.synthetic) {
        pc = synthetic::make_scene(cfg.seed ? cfg.seed : 1);
    } else {
        std::fprintf(stderr, "project: need --scan or --synthetic\n");
        return 2;
    }

    const proj::RangeImage img = proj::rasterize(pc, cfg.projection);
    if (!out_prefix.empty()) {
        const std::filesystem::path p(out_prefix);
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        proj::write_range_ppm(out_prefix + "_range.ppm", img);
        proj::write_raster_dump(out_prefix + "_raster.bin", img);
        if (img.has_labels())
            proj::write_label_ppm(out_prefix + "_labels.ppm", img.labels, img.height, img.width,
                                  proj::load_palette(cfg.palette_path));
    }
    std::size_t valid = 0;
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    for (std::size_t p = 0; p < hw; ++p)
        if (img.pixel_point[p] != proj::kEmpty) ++valid;
    std::printf("points %zu  raster %dx%d  occupancy %.4f\n", pc.size(), img.height, img.width,
                hw ? static_cast<double>(valid) / static_cast<double>(hw) : 0.0);
    return 0;
}

int run_train(const CommonArgs& args, const std::string& resume, int max_steps, int eval_every,
              double stop_at) {
    config::RunConfig cfg = build_config(args);
    trainer::TrainOptions opt;
    opt.resume_path = resume;
    opt.max_steps = max_steps;
    opt.eval_every = eval_every;
    opt.stop_at_miou = stop_at;
    trainer::TrainResult r = trainer::train(cfg, opt);
    std::printf("done: %d steps, checkpoint %s\n", r.steps_run, r.final_checkpoint.c_str());
    if (r.final_pixel_miou >= 0.0)
        std::printf("train pixel mIoU %.4f\n", r.final_pixel_miou);
    return 0;
}

int run_eval(const CommonArgs& args, const std::string& ckpt, int k, std::size_t limit,
             const std::string& metrics_out) {
    config::RunConfig cfg = build_config(args);
    trainer::EvalResult r = trainer::evaluate(cfg, ckpt, k, limit);
    std::printf("%s", r.table.c_str());
    if (!metrics_out.empty()) {
        const std::filesystem::path p(metrics_out);
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        std::FILE* f = std::fopen(metrics_out.c_str(), "w");
        if (!f) {
            std::fprintf(stderr, "eval: cannot write %s\n", metrics_out.c_str());
            return 2;
        }
        std::fputs(r.json.c_str(), f);
        std::fclose(f);
    }
    return 0;
}

int run_gradcheck(std::uint64_t seed, int bits, bool corrupt_gelu) {
    if (bits != 32 && bits != 64) {
        std::fprintf(stderr, "gradcheck: --bits must be 32 or 64\n");
        return 2;
    }
    ops::corrupt_gelu_backward() = corrupt_gelu;
    std::printf("gradient checks, %d-bit mode, seed %llu\n", bits,
                static_cast<unsigned long long>(seed));
    const auto results = bits == 64 ? gradcheck::run_suite(seed, true)
                                    : gradcheck::run_suite_f32(seed, true);
    ops::corrupt_gelu_backward() = false;
    int failures = 0;
    for (const auto& r : results)
        if (!r.pass) ++failures;
    std::printf("%zu checks, %d failures\n", results.size(), failures);
    return failures ? 1 : 0;
}

int run_stats(const CommonArgs& args) {
    config::RunConfig cfg = build_config(args);
    std::printf("%s", trainer::parameter_report(cfg).c_str());
    if (cfg.synthetic || !cfg.data_root.empty()) {
        const auto samples = trainer::load_samples(cfg, 4);
        double occ = 0.0;
        for (const auto& s : samples) {
            std::size_t valid = 0;
            const std::size_t hw =
                static_cast<std::size_t>(s.raster.height) * s.raster.width;
            for (std::size_t p = 0; p < hw; ++p)
                if (s.raster.pixel_point[p] != proj::kEmpty) ++valid;
            occ += static_cast<double>(valid) / static_cast<double>(hw);
        }
        std::printf("sampled %zu scans, mean raster occupancy %.4f\n", samples.size(),
                    occ / static_cast<double>(samples.size()));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"range-view LiDAR semantic segmentation pipeline"};
    app.require_subcommand(1);

    CommonArgs project_args, train_args, eval_args, stats_args;
    std::string scan_path, label_path, out_prefix;
    auto* project = app.add_subcommand("project", "rasterize a scan to a range image");
    add_common(project, project_args);
    project->add_option("--scan", scan_path, "velodyne .bin scan");
    project->add_option("--labels", label_path, ".label file for the scan");
    project->add_option("-o,--out", out_prefix, "output file prefix");

    std::string resume;
    int max_steps = 0, eval_every = 0;
    double stop_at = -1.0;
    auto* train = app.add_subcommand("train", "train the segmentation model");
    add_common(train, train_args);
    train->add_option("--resume", resume, "checkpoint to continue from");
    train->add_option("--max-steps", max_steps, "cap the total step count");
    train->add_option("--eval-every", eval_every, "training-set pixel mIoU probe interval");
    train->add_option("--stop-at-miou", stop_at, "early stop once the probe reaches this mIoU");

    std::string ckpt, metrics_out;
    int knn_k = 7;
    std::size_t eval_limit = 0;
    auto* evalc = app.add_subcommand("eval", "point-level mIoU of a checkpoint");
    add_common(evalc, eval_args);
    evalc->add_option("--checkpoint", ckpt, "model checkpoint (.rsck)");
    evalc->add_option("-k", knn_k, "back-projection neighbor count");
    evalc->add_option("--limit", eval_limit, "evaluate at most this many scans");
    evalc->add_option("--metrics-out", metrics_out, "structured metrics file (JSON)");

    std::uint64_t gc_seed = 1234;
    int gc_bits = 64;
    bool gc_corrupt = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--seed", gc_seed, "suite seed");
    gradcheck->add_option("--bits", gc_bits, "64 = FD oracle, 32 = float-vs-double comparison");
    gradcheck->add_flag("--corrupt-gelu", gc_corrupt,
                        "negative control: break the gelu derivative");

    auto* stats = app.add_subcommand("stats", "parameter counts and dataset statistics");
    add_common(stats, stats_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (project->parsed()) return run_project(project_args, scan_path, label_path, out_prefix);
        if (train->parsed()) return run_train(train_args, resume, max_steps, eval_every, stop_at);
        if (evalc->parsed()) return run_eval(eval_args, ckpt, knn_k, eval_limit, metrics_out);
        if (gradcheck->parsed()) return run_gradcheck(gc_seed, gc_bits, gc_corrupt);
        if (stats->parsed()) return run_stats(stats_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
