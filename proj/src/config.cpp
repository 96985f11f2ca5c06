#include "rangesam/config.hpp"

#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace rangesam::config {

using nlohmann::json;

namespace {

// merges a value at a dot path into j, creating objects along the way
void set_dot_path(json& j, const std::string& path, const json& value) {
    json* cur = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw std::invalid_argument("override: empty key segment in '" + path + "'");
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

json parse_override_value(const std::string& raw) {
    // numbers / booleans / arrays parse as JSON; anything else is a string
    json v = json::parse(raw, nullptr, false);
    if (v.is_discarded()) return json(raw);
    return v;
}

template <typename T>
void get_to(const json& j, const char* key, T& out, const std::string& ctx) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config field '" + ctx + key + "': " + e.what());
    }
}

void from_json_pair(const json& j, const char* key, std::pair<int, int>& out,
                    const std::string& ctx) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 2)
        throw std::invalid_argument("config field '" + ctx + key + "' must be a [h,w] pair");
    out = {a[0].get<int>(), a[1].get<int>()};
}

void apply_json(RunConfig& cfg, const json& j) {
    // presets first so explicit fields can refine them
    if (j.contains("toy") && j.at("toy").get<bool>()) apply_toy_preset(cfg);
    if (j.contains("projection")) {
        const auto& p = j.at("projection");
        get_to(p, "height", cfg.projection.height, "projection.");
        get_to(p, "width", cfg.projection.width, "projection.");
        double up_deg = cfg.projection.fov_up * 180.0 / proj::kPi;
        double down_deg = cfg.projection.fov_down * 180.0 / proj::kPi;
        get_to(p, "fov_up_deg", up_deg, "projection.");
        get_to(p, "fov_down_deg", down_deg, "projection.");
        cfg.projection.fov_up = up_deg * proj::kPi / 180.0;
        cfg.projection.fov_down = down_deg * proj::kPi / 180.0;
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        if (m.contains("toy") && m.at("toy").get<bool>()) apply_toy_preset(cfg);
        get_to(m, "stem_channels", cfg.model.stem_channels, "model.");
        get_to(m, "stage_blocks", cfg.model.stage_blocks, "model.");
        get_to(m, "stage_channels", cfg.model.stage_channels, "model.");
        get_to(m, "global_blocks", cfg.model.global_blocks, "model.");
        get_to(m, "heads", cfg.model.heads, "model.");
        get_to(m, "mlp_ratio", cfg.model.mlp_ratio, "model.");
        get_to(m, "decoder_channels", cfg.model.decoder_channels, "model.");
        get_to(m, "drop_path_max", cfg.model.drop_path_max, "model.");
        get_to(m, "pos_enabled", cfg.model.pos_enabled, "model.");
        if (m.contains("window_sizes")) {
            const auto& ws = m.at("window_sizes");
            if (!ws.is_array() || ws.size() != 4)
                throw std::invalid_argument("config field 'model.window_sizes' must list 4 [h,w] pairs");
            cfg.model.window_sizes.clear();
            for (const auto& w : ws)
                cfg.model.window_sizes.emplace_back(w[0].get<int>(), w[1].get<int>());
        }
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        if (o.contains("backbone")) {
            get_to(o.at("backbone"), "lr", cfg.backbone.lr, "optimizer.backbone.");
            get_to(o.at("backbone"), "weight_decay", cfg.backbone.weight_decay, "optimizer.backbone.");
        }
        if (o.contains("head")) {
            get_to(o.at("head"), "lr", cfg.head.lr, "optimizer.head.");
            get_to(o.at("head"), "weight_decay", cfg.head.weight_decay, "optimizer.head.");
        }
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        get_to(s, "epochs", cfg.epochs, "schedule.");
        get_to(s, "warmup_fraction", cfg.warmup_fraction, "schedule.");
        get_to(s, "batch_size", cfg.batch_size, "schedule.");
        get_to(s, "steps_per_epoch", cfg.steps_per_epoch, "schedule.");
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        if (l.contains("lambda")) {
            const auto& lam = l.at("lambda");
            if (!lam.is_array() || lam.size() != 4)
                throw std::invalid_argument("config field 'loss.lambda' must list 4 weights");
            for (std::size_t i = 0; i < 4; ++i) cfg.lambda[i] = lam[i].get<double>();
        }
        get_to(l, "aux_weight", cfg.aux_weight, "loss.");
    }
    if (j.contains("aug")) {
        const auto& a = j.at("aug");
        get_to(a, "enabled", cfg.aug_enabled, "aug.");
        get_to(a, "p_rotate", cfg.aug.p_rotate, "aug.");
        get_to(a, "p_jitter", cfg.aug.p_jitter, "aug.");
        get_to(a, "p_flip", cfg.aug.p_flip, "aug.");
        get_to(a, "p_drop", cfg.aug.p_drop, "aug.");
        get_to(a, "jitter_sigma", cfg.aug.jitter_sigma, "aug.");
        get_to(a, "jitter_clip", cfg.aug.jitter_clip, "aug.");
        get_to(a, "drop_max", cfg.aug.drop_max, "aug.");
        get_to(a, "p_mix", cfg.aug.p_mix, "aug.");
        get_to(a, "p_union", cfg.aug.p_union, "aug.");
        get_to(a, "p_shift", cfg.aug.p_shift, "aug.");
        get_to(a, "p_paste", cfg.aug.p_paste, "aug.");
        get_to(a, "mix_sectors", cfg.aug.mix_sectors, "aug.");
        if (a.contains("paste_classes")) {
            cfg.aug.paste_classes.clear();
            for (const auto& c : a.at("paste_classes"))
                cfg.aug.paste_classes.push_back(static_cast<std::uint8_t>(c.get<int>()));
        }
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        get_to(d, "root", cfg.data_root, "data.");
        get_to(d, "split", cfg.split, "data.");
        get_to(d, "remap", cfg.remap_path, "data.");
        get_to(d, "palette", cfg.palette_path, "data.");
        get_to(d, "synthetic", cfg.synthetic, "data.");
        get_to(d, "synthetic_scenes", cfg.synthetic_scenes, "data.");
    }
    get_to(j, "seed", cfg.seed, "");
    get_to(j, "out_dir", cfg.out_dir, "");
}

} // namespace

void RunConfig::validate() const {
    projection.validate();
    model.validate();
    aug.validate();
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
        throw std::invalid_argument("config: warmup_fraction must be in [0,1)");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (aux_weight < 0.0) throw std::invalid_argument("config: aux_weight must be >= 0");
    if (synthetic_scenes < 1) throw std::invalid_argument("config: synthetic_scenes must be >= 1");
}

void RunConfig::sync_input_dims() {
    model.input_hw = {projection.height, projection.width};
}

void apply_toy_preset(RunConfig& cfg) {
    cfg.model = model::ModelConfig::toy();
    cfg.projection.height = cfg.model.input_hw.first;
    cfg.projection.width = cfg.model.input_hw.second;
    // desk-scale runs are short overfits: faster rate, no decay, two
    // scenes per step
    cfg.backbone = {5e-3, 0.0};
    cfg.head = {5e-3, 0.0};
    cfg.batch_size = 2;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    json j = json::object();
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("config file not found: " + path);
        try {
            j = json::parse(is);
        } catch (const json::parse_error& e) {
            throw std::invalid_argument("config parse error in " + path + ": " + e.what());
        }
    }
    for (const auto& ov : overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("override must look like dot.path=value, got '" + ov + "'");
        set_dot_path(j, ov.substr(0, eq), parse_override_value(ov.substr(eq + 1)));
    }

    RunConfig cfg;
    if (const char* env = std::getenv("RANGESAM_DATA_ROOT")) cfg.data_root = env;
    apply_json(cfg, j);
    cfg.sync_input_dims();
    cfg.validate();
    return cfg;
}

std::string to_json(const RunConfig& cfg) {
    json j;
    j["projection"] = {{"height", cfg.projection.height},
                       {"width", cfg.projection.width},
                       {"fov_up_deg", cfg.projection.fov_up * 180.0 / proj::kPi},
                       {"fov_down_deg", cfg.projection.fov_down * 180.0 / proj::kPi}};
    json ws = json::array();
    for (auto [h, w] : cfg.model.window_sizes) ws.push_back({h, w});
    j["model"] = {{"stem_channels", cfg.model.stem_channels},
                  {"stage_blocks", cfg.model.stage_blocks},
                  {"stage_channels", cfg.model.stage_channels},
                  {"window_sizes", ws},
                  {"global_blocks", cfg.model.global_blocks},
                  {"heads", cfg.model.heads},
                  {"mlp_ratio", cfg.model.mlp_ratio},
                  {"decoder_channels", cfg.model.decoder_channels},
                  {"drop_path_max", cfg.model.drop_path_max},
                  {"pos_enabled", cfg.model.pos_enabled}};
    j["optimizer"] = {{"backbone", {{"lr", cfg.backbone.lr}, {"weight_decay", cfg.backbone.weight_decay}}},
                      {"head", {{"lr", cfg.head.lr}, {"weight_decay", cfg.head.weight_decay}}}};
    j["schedule"] = {{"epochs", cfg.epochs},
                     {"warmup_fraction", cfg.warmup_fraction},
                     {"batch_size", cfg.batch_size},
                     {"steps_per_epoch", cfg.steps_per_epoch}};
    j["loss"] = {{"lambda", cfg.lambda}, {"aux_weight", cfg.aux_weight}};
    j["aug"] = {{"enabled", cfg.aug_enabled}, {"p_mix", cfg.aug.p_mix},
                {"p_union", cfg.aug.p_union}, {"p_shift", cfg.aug.p_shift},
                {"p_paste", cfg.aug.p_paste}};
    j["data"] = {{"root", cfg.data_root},     {"split", cfg.split},
                 {"remap", cfg.remap_path},   {"palette", cfg.palette_path},
                 {"synthetic", cfg.synthetic}, {"synthetic_scenes", cfg.synthetic_scenes}};
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    return j.dump(2);
}

} // namespace rangesam::config
