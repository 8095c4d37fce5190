#include "evt/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace evt {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::string_view section, const std::set<std::string>& known) {
    if (!j.is_object()) throw std::invalid_argument(std::string(section) + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw std::invalid_argument("unknown config key '" + std::string(section) + "." + key + "'");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, std::string_view section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw std::invalid_argument("bad value for '" + std::string(section) + "." + key + "': " + e.what());
    }
}

}  // namespace

json to_json(const ReprConfig& c) {
    return {{"delta_t", c.delta_t},         {"bins", c.bins},
            {"patch_size", c.patch_size},   {"min_pixel_pct", c.min_pixel_pct},
            {"min_patches", c.min_patches}, {"expansion_step", c.expansion_step}};
}

json to_json(const ModelConfig& c) {
    return {{"dim", c.dim},
            {"latents", c.latents},
            {"self_blocks", c.self_blocks},
            {"heads", c.heads},
            {"ff_mult", c.ff_mult},
            {"pos_bands", c.pos_bands},
            {"num_classes", c.num_classes},
            {"grid_h", c.grid_h},
            {"grid_w", c.grid_w},
            {"token_in", c.token_in},
            {"dropout_p", c.dropout_p},
            {"latent_init_std", c.latent_init_std}};
}

json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"weight_decay", c.weight_decay},
            {"grad_clip_norm", c.grad_clip_norm},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"plateau_patience", c.plateau_patience},
            {"lr_decay", c.lr_decay},
            {"seed", c.seed},
            {"token_drop_p", c.token_drop_p},
            {"temporal_crop_frac", c.temporal_crop_frac},
            {"spatial_shift_max", c.spatial_shift_max},
            {"repeat_augmented", c.repeat_augmented},
            {"deterministic", c.deterministic}};
}

json to_json(const RunConfig& c) {
    return {{"repr", to_json(c.repr)}, {"model", to_json(c.model)}, {"train", to_json(c.train)}};
}

ReprConfig repr_from_json(const json& j) {
    reject_unknown(j, "repr", {"delta_t", "bins", "patch_size", "min_pixel_pct", "min_patches", "expansion_step"});
    ReprConfig c;
    read(j, "delta_t", c.delta_t, "repr");
    read(j, "bins", c.bins, "repr");
    read(j, "patch_size", c.patch_size, "repr");
    read(j, "min_pixel_pct", c.min_pixel_pct, "repr");
    read(j, "min_patches", c.min_patches, "repr");
    read(j, "expansion_step", c.expansion_step, "repr");
    c.validate();
    return c;
}

ModelConfig model_from_json(const json& j) {
    reject_unknown(j, "model", {"dim", "latents", "self_blocks", "heads", "ff_mult", "pos_bands",
                                "num_classes", "grid_h", "grid_w", "token_in", "dropout_p",
                                "latent_init_std"});
    ModelConfig c;
    read(j, "dim", c.dim, "model");
    read(j, "latents", c.latents, "model");
    read(j, "self_blocks", c.self_blocks, "model");
    read(j, "heads", c.heads, "model");
    read(j, "ff_mult", c.ff_mult, "model");
    read(j, "pos_bands", c.pos_bands, "model");
    read(j, "num_classes", c.num_classes, "model");
    read(j, "grid_h", c.grid_h, "model");
    read(j, "grid_w", c.grid_w, "model");
    read(j, "token_in", c.token_in, "model");
    read(j, "dropout_p", c.dropout_p, "model");
    read(j, "latent_init_std", c.latent_init_std, "model");
    c.validate();
    return c;
}

TrainConfig train_from_json(const json& j) {
    reject_unknown(j, "train", {"lr", "beta1", "beta2", "eps", "weight_decay", "grad_clip_norm",
                                "batch_size", "epochs", "plateau_patience", "lr_decay", "seed",
                                "token_drop_p", "temporal_crop_frac", "spatial_shift_max",
                                "repeat_augmented", "deterministic"});
    TrainConfig c;
    read(j, "lr", c.lr, "train");
    read(j, "beta1", c.beta1, "train");
    read(j, "beta2", c.beta2, "train");
    read(j, "eps", c.eps, "train");
    read(j, "weight_decay", c.weight_decay, "train");
    read(j, "grad_clip_norm", c.grad_clip_norm, "train");
    read(j, "batch_size", c.batch_size, "train");
    read(j, "epochs", c.epochs, "train");
    read(j, "plateau_patience", c.plateau_patience, "train");
    read(j, "lr_decay", c.lr_decay, "train");
    read(j, "seed", c.seed, "train");
    read(j, "token_drop_p", c.token_drop_p, "train");
    read(j, "temporal_crop_frac", c.temporal_crop_frac, "train");
    read(j, "spatial_shift_max", c.spatial_shift_max, "train");
    read(j, "repeat_augmented", c.repeat_augmented, "train");
    read(j, "deterministic", c.deterministic, "train");
    c.validate();
    return c;
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j, "config", {"repr", "model", "train"});
    RunConfig c;
    if (j.contains("repr")) c.repr = repr_from_json(j.at("repr"));
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path.string());
    json j;
    try {
        // Comments are allowed so the example config can document itself.
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(cfg).dump(2) << '\n';
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
        throw std::invalid_argument("override must look like section.key=value: " + std::string(assignment));
    }
    const std::string section(assignment.substr(0, dot));
    const std::string key(assignment.substr(dot + 1, eq - dot - 1));
    const std::string raw(assignment.substr(eq + 1));
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json j = to_json(cfg);
    if (!j.contains(section)) throw std::invalid_argument("unknown config section '" + section + "'");
    if (!j[section].contains(key)) {
        throw std::invalid_argument("unknown config key '" + section + "." + key + "'");
    }
    j[section][key] = value;
    cfg = run_config_from_json(j);
}

}  // namespace evt
