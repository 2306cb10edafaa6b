#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "earvit/margin.hpp"
#include "earvit/data.hpp"
#include "earvit/trainer.hpp"
#include "earvit/verify.hpp"
#include "earvit/vit.hpp"

namespace earvit::cli {

inline constexpr int kConfigVersion = 1;

// One run, read from an INI file (see "Configuration" in the README):
//
//   version = 1
//   [model] variant depth width heads mlp_ratio channels image_size patch_size stride
//   [loss]  scale margin sample_rate seed
//   [train] base_lr weight_decay epochs warmup_epochs batch_size seed beta1 beta2 eps clip_norm
//   [data]  root name
//   [synth] identities images_per_identity image_size noise_std seed with_sides
//   [eval]  repeats impostor_ratio seed
//
// Missing keys keep their defaults; `version` is mandatory.
struct RunConfig {
    ViTConfig model;
    MarginSpec loss;
    std::uint64_t loss_seed = 0;
    TrainConfig train;
    std::string data_root;
    std::string data_name = "synthetic";
    SynthSpec synth;
    EvalSettings eval;

    RunConfig();

    // Re-runs every owning module's checks. Throws ConfigError or GridError.
    void validate() const;

    // Sets the variant; presets also fix depth, width, heads and mlp_ratio.
    void set_variant(std::string_view code);
    // Replaces patch/stride, keeping the image side.
    void set_grid(int patch_size, int stride);
};

bool operator==(const RunConfig& a, const RunConfig& b);

// Unknown sections/keys, bad values and failed validation raise ConfigError
// (or GridError) naming the first offending key.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& config);

}  // namespace earvit::cli
