#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "earvit/patch.hpp"
#include "earvit/rng.hpp"
#include "earvit/tensor.hpp"

namespace earvit {

enum class Variant { Tiny, Small, Base, Large, Custom };

// "T", "S", "B", "L" or "custom".
std::string_view variant_code(Variant v);
// Accepts T/S/B/L (case-insensitive, optional "ViT_"/"ViT-" prefix).
Variant parse_variant(std::string_view text);

inline constexpr int kEmbeddingDim = 512;
inline constexpr double kLayerNormEps = 1e-6;

struct ViTConfig {
    Variant variant = Variant::Custom;
    int depth = 0;
    int width = 0;
    int heads = 1;
    double mlp_ratio = 4.0;
    int embed_dim = kEmbeddingDim;
    int channels = 3;
    PatchGrid grid;

    int head_dim() const { return width / heads; }
    int mlp_hidden() const;
    int tokens() const { return grid.count() + 1; }
    int patch_features() const { return channels * grid.patch_size * grid.patch_size; }

    // Throws ConfigError on width % heads != 0, embed_dim != 512, etc.
    void validate() const;

    // "ViT_T_p28_s14"; custom models read "ViT_custom_p8_s4".
    std::string label() const;

    friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

// Presets: T (12, 192, 3), S (12, 384, 6), B (12, 768, 12), L (24, 1024, 16),
// all with MLP ratio 4 and a 512-d embedding head.
ViTConfig config_for(Variant variant, const PatchGrid& grid, int channels = 3);
ViTConfig config_for(std::string_view variant, const PatchGrid& grid, int channels = 3);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct EncoderLayer {
    Tensor norm1_weight, norm1_bias;
    Tensor qkv_weight, qkv_bias;    // [D x 3D], [3D]; columns are q | k | v
    Tensor proj_weight, proj_bias;  // [D x D], [D]
    Tensor norm2_weight, norm2_bias;
    Tensor fc1_weight, fc1_bias;  // [D x hidden], [hidden]
    Tensor fc2_weight, fc2_bias;  // [hidden x D], [D]
};

struct ModelParams {
    PatchEmbedding embedding;
    std::vector<EncoderLayer> layers;
    Tensor norm_weight, norm_bias;
    Tensor head_weight, head_bias;  // [D x 512], [512]

    // Truncated-normal(0.02) for projections, tables and the class token;
    // zero biases; unit norm scales.
    static ModelParams initialize(const ViTConfig& config, Rng& rng);

    // Stable traversal order used by the optimizer and the checkpoint file.
    std::vector<NamedTensor> named() const;
    std::size_t count() const;
    ModelParams clone() const;
};

std::size_t parameter_count(const ViTConfig& config);

// Attention weights recorded during a forward pass, one [T x T] matrix per
// (image, head), image-major.
struct AttentionTrace {
    std::vector<Tensor> weights;
};

// Multi-head scaled dot-product attention over stacked sequences of length
// seq_len, followed by the output projection. `x` is expected to be
// already normalized.
Tensor attention(const Tensor& x, const EncoderLayer& layer, int heads, int seq_len,
                 AttentionTrace* trace = nullptr);

// Pre-norm transformer stack followed by the final layer norm.
TokenSequence encoder_forward(const TokenSequence& tokens, const ViTConfig& config, const ModelParams& params,
                              std::vector<AttentionTrace>* traces = nullptr);

// Class-token readout -> linear head -> L2 normalization. [batch x 512].
Tensor extract_embedding(const TokenSequence& encoded, const ModelParams& params);

// images -> unit embeddings, the full forward pass.
Tensor embed_images(const ViTConfig& config, const ModelParams& params, std::span<const Tensor> images);

struct Checkpoint {
    ViTConfig config;
    ModelParams params;
};

inline constexpr std::string_view kCheckpointMagic = "EARVITCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace earvit
