#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ginv/checkpoint.hpp"
#include "ginv/dataset.hpp"
#include "ginv/inversion.hpp"
#include "ginv/wgan_gp.hpp"

namespace ginv {

inline ordered_json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw io_error("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

inline void write_json_file(const std::string& path, const ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write file: " + path);
    out << j.dump(2) << "\n";
}

// Optional-key overlay: assigns only when the key is present.
template <typename T>
inline void jset(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).template get<T>();
}

// --- dataset resolution ------------------------------------------------

// Returns the first existing of stem, stem.gz under dir.
inline std::string resolve_idx(const std::string& dir, const std::string& stem) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(dir) / stem;
    if (fs::exists(base)) return base.string();
    const fs::path gz = fs::path(dir) / (stem + ".gz");
    if (fs::exists(gz)) return gz.string();
    throw io_error("dataset file not found: " + base.string() + " (or .gz)");
}

inline LabeledImageSet load_split(const std::string& data_dir, const std::string& dataset,
                                  const std::string& split) {
    GINV_CHECK(dataset == "mnist" || dataset == "fmnist",
               "unknown dataset '" + dataset + "' (expected mnist or fmnist)");
    GINV_CHECK(split == "train" || split == "test",
               "unknown split '" + split + "' (expected train or test)");
    const std::string dir = (std::filesystem::path(data_dir) / dataset).string();
    const std::string prefix = split == "train" ? "train" : "t10k";
    return load_idx(resolve_idx(dir, prefix + "-images-idx3-ubyte"),
                    resolve_idx(dir, prefix + "-labels-idx1-ubyte"), dataset, split);
}

// --- config overlays ----------------------------------------------------

inline void overlay(CondGenerator<float>::Arch& a, const ordered_json& j) {
    jset(j, "latent_dim", a.latent_dim);
    jset(j, "classes", a.classes);
    jset(j, "embed_dim", a.embed_dim);
    jset(j, "proj_channels", a.proj_channels);
    jset(j, "mid_channels", a.mid_channels);
}

inline void overlay(CondCritic<float>::Arch& a, const ordered_json& j) {
    jset(j, "classes", a.classes);
    jset(j, "embed_dim", a.embed_dim);
    jset(j, "base_channels", a.base_channels);
    jset(j, "mid_channels", a.mid_channels);
}

inline void overlay(GanTrainConfig& c, const ordered_json& j) {
    if (j.contains("g_arch")) overlay(c.g_arch, j.at("g_arch"));
    if (j.contains("d_arch")) overlay(c.d_arch, j.at("d_arch"));
    jset(j, "batch", c.batch);
    jset(j, "generator_steps", c.generator_steps);
    jset(j, "critic_iters", c.critic_iters);
    jset(j, "lr", c.lr);
    jset(j, "beta1", c.beta1);
    jset(j, "beta2", c.beta2);
    jset(j, "lambda_gp", c.lambda_gp);
    jset(j, "seed", c.seed);
    jset(j, "log_interval", c.log_interval);
    jset(j, "sample_interval", c.sample_interval);
    jset(j, "checkpoint_interval", c.checkpoint_interval);
}

inline void overlay(InversionConfig& c, const ordered_json& j) {
    jset(j, "steps", c.steps);
    jset(j, "restarts", c.restarts);
    jset(j, "beta", c.beta);
    jset(j, "alpha", c.alpha);
    jset(j, "seed", c.seed);
    jset(j, "use_adam", c.use_adam);
    jset(j, "snapshot_steps", c.snapshot_steps);
}

inline ordered_json inversion_json(const InversionConfig& c) {
    ordered_json j;
    j["steps"] = c.steps;
    j["restarts"] = c.restarts;
    j["beta"] = c.beta;
    j["alpha"] = c.alpha;
    j["seed"] = c.seed;
    j["use_adam"] = c.use_adam;
    if (!c.snapshot_steps.empty()) j["snapshot_steps"] = c.snapshot_steps;
    return j;
}

// --- train-gan ----------------------------------------------------------

struct TrainGanSpec {
    std::string dataset = "mnist";
    std::string data_dir = "data";
    GanTrainConfig gan;  // gan.out_dir is the run directory

    ordered_json to_json() const {
        ordered_json j;
        j["task"] = "train-gan";
        j["dataset"] = dataset;
        j["data_dir"] = data_dir;
        j["out"] = gan.out_dir;
        j["gan"] = gan.to_json();
        return j;
    }
};

inline GanTrainResult run_train_gan(const TrainGanSpec& spec) {
    GINV_CHECK(!spec.gan.out_dir.empty(), "train-gan: an output directory is required");
    LabeledImageSet train = load_split(spec.data_dir, spec.dataset, "train");
    std::filesystem::create_directories(spec.gan.out_dir);
    write_json_file((std::filesystem::path(spec.gan.out_dir) / "config.json").string(),
                    spec.to_json());
    ordered_json seeds;
    seeds["master"] = spec.gan.seed;
    seeds["generator_init"] = derive_seed({spec.gan.seed, 0x696e6974ULL, 1});
    seeds["critic_init"] = derive_seed({spec.gan.seed, 0x696e6974ULL, 2});
    seeds["data"] = derive_seed({spec.gan.seed, 0x64617461ULL});
    seeds["latents"] = derive_seed({spec.gan.seed, 0x7aULL});
    seeds["penalty"] = derive_seed({spec.gan.seed, 0x6770ULL});
    write_json_file((std::filesystem::path(spec.gan.out_dir) / "seeds.json").string(), seeds);
    return train_cgan(train, spec.gan);
}

}  // namespace ginv
