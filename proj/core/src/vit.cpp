#include "earvit/vit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "earvit/error.hpp"
#include "earvit/io.hpp"

namespace earvit {

std::string_view variant_code(Variant v) {
    switch (v) {
        case Variant::Tiny: return "T";
        case Variant::Small: return "S";
        case Variant::Base: return "B";
        case Variant::Large: return "L";
        case Variant::Custom: return "custom";
    }
    return "custom";
}

Variant parse_variant(std::string_view text) {
    std::string s(text);
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (s.rfind("VIT_", 0) == 0 || s.rfind("VIT-", 0) == 0) s = s.substr(4);
    if (s == "T" || s == "TINY") return Variant::Tiny;
    if (s == "S" || s == "SMALL") return Variant::Small;
    if (s == "B" || s == "BASE") return Variant::Base;
    if (s == "L" || s == "LARGE") return Variant::Large;
    throw ConfigError("unknown ViT variant '" + std::string(text) + "' (expected T, S, B or L)");
}

int ViTConfig::mlp_hidden() const { return static_cast<int>(std::lround(width * mlp_ratio)); }

void ViTConfig::validate() const {
    if (depth < 0) throw ConfigError("model depth must be non-negative");
    if (width < 1 || heads < 1) throw ConfigError("model width and heads must be positive");
    if (width % heads != 0) {
        throw ConfigError("model width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (!(mlp_ratio > 0.0) || mlp_hidden() < 1) throw ConfigError("mlp_ratio must give a positive hidden width");
    if (embed_dim != kEmbeddingDim) {
        throw ConfigError("embedding dimension must be " + std::to_string(kEmbeddingDim) + ", got " +
                          std::to_string(embed_dim));
    }
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
    PatchGrid::make(grid.image_size, grid.patch_size, grid.stride);
}

std::string ViTConfig::label() const {
    return "ViT_" + std::string(variant_code(variant)) + "_" + grid.label();
}

ViTConfig config_for(Variant variant, const PatchGrid& grid, int channels) {
    ViTConfig c;
    c.variant = variant;
    c.grid = PatchGrid::make(grid.image_size, grid.patch_size, grid.stride);
    c.channels = channels;
    switch (variant) {
        case Variant::Tiny: c.depth = 12, c.width = 192, c.heads = 3; break;
        case Variant::Small: c.depth = 12, c.width = 384, c.heads = 6; break;
        case Variant::Base: c.depth = 12, c.width = 768, c.heads = 12; break;
        case Variant::Large: c.depth = 24, c.width = 1024, c.heads = 16; break;
        case Variant::Custom: throw ConfigError("config_for: custom models have no preset");
    }
    c.validate();
    return c;
}

ViTConfig config_for(std::string_view variant, const PatchGrid& grid, int channels) {
    return config_for(parse_variant(variant), grid, channels);
}

// ---- parameters ------------------------------------------------------------

namespace {

Tensor trunc_normal(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.truncated_normal(0.02);
    return Tensor(std::move(shape), std::move(v), true);
}

Tensor zeros(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones(std::size_t n) { return Tensor::full({n}, 1.0, true); }

template <typename Fn>
void for_each_slot(ModelParams& p, Fn&& fn) {
    fn("patch_embed.weight", p.embedding.weight);
    fn("patch_embed.bias", p.embedding.bias);
    fn("pos_embed", p.embedding.position);
    fn("cls_token", p.embedding.cls_token);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const std::string pre = "blocks." + std::to_string(i) + ".";
        EncoderLayer& l = p.layers[i];
        fn(pre + "norm1.weight", l.norm1_weight);
        fn(pre + "norm1.bias", l.norm1_bias);
        fn(pre + "attn.qkv.weight", l.qkv_weight);
        fn(pre + "attn.qkv.bias", l.qkv_bias);
        fn(pre + "attn.proj.weight", l.proj_weight);
        fn(pre + "attn.proj.bias", l.proj_bias);
        fn(pre + "norm2.weight", l.norm2_weight);
        fn(pre + "norm2.bias", l.norm2_bias);
        fn(pre + "mlp.fc1.weight", l.fc1_weight);
        fn(pre + "mlp.fc1.bias", l.fc1_bias);
        fn(pre + "mlp.fc2.weight", l.fc2_weight);
        fn(pre + "mlp.fc2.bias", l.fc2_bias);
    }
    fn("norm.weight", p.norm_weight);
    fn("norm.bias", p.norm_bias);
    fn("head.weight", p.head_weight);
    fn("head.bias", p.head_bias);
}

}  // namespace

ModelParams ModelParams::initialize(const ViTConfig& config, Rng& rng) {
    config.validate();
    const auto d = static_cast<std::size_t>(config.width);
    const auto hidden = static_cast<std::size_t>(config.mlp_hidden());
    const auto t = static_cast<std::size_t>(config.tokens());
    const auto e = static_cast<std::size_t>(config.embed_dim);

    ModelParams p;
    p.embedding.weight = trunc_normal(rng, {static_cast<std::size_t>(config.patch_features()), d});
    p.embedding.bias = zeros(d);
    p.embedding.position = trunc_normal(rng, {t, d});
    p.embedding.cls_token = trunc_normal(rng, {1, d});
    for (int i = 0; i < config.depth; ++i) {
        EncoderLayer l;
        l.norm1_weight = ones(d);
        l.norm1_bias = zeros(d);
        l.qkv_weight = trunc_normal(rng, {d, 3 * d});
        l.qkv_bias = zeros(3 * d);
        l.proj_weight = trunc_normal(rng, {d, d});
        l.proj_bias = zeros(d);
        l.norm2_weight = ones(d);
        l.norm2_bias = zeros(d);
        l.fc1_weight = trunc_normal(rng, {d, hidden});
        l.fc1_bias = zeros(hidden);
        l.fc2_weight = trunc_normal(rng, {hidden, d});
        l.fc2_bias = zeros(d);
        p.layers.push_back(std::move(l));
    }
    p.norm_weight = ones(d);
    p.norm_bias = zeros(d);
    p.head_weight = trunc_normal(rng, {d, e});
    p.head_bias = zeros(e);
    return p;
}

std::vector<NamedTensor> ModelParams::named() const {
    std::vector<NamedTensor> out;
    auto& self = const_cast<ModelParams&>(*this);
    for_each_slot(self, [&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
    return out;
}

std::size_t ModelParams::count() const {
    std::size_t n = 0;
    for (const auto& nt : named()) n += nt.tensor.numel();
    return n;
}

ModelParams ModelParams::clone() const {
    ModelParams copy = *this;
    for_each_slot(copy, [](const std::string&, Tensor& t) { t = t.detach_copy(true); });
    return copy;
}

std::size_t parameter_count(const ViTConfig& config) {
    config.validate();
    const std::size_t d = config.width, h = config.mlp_hidden(), t = config.tokens();
    const std::size_t f = config.patch_features(), e = config.embed_dim;
    const std::size_t per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
    return (f * d + d) + t * d + d + config.depth * per_layer + 2 * d + (d * e + e);
}

// ---- forward ---------------------------------------------------------------

Tensor attention(const Tensor& x, const EncoderLayer& layer, int heads, int seq_len, AttentionTrace* trace) {
    if (x.rank() != 2) throw ShapeError("attention: expected [tokens x width], got " + shape_str(x.shape()));
    const std::size_t d = x.dim(1);
    if (heads < 1 || d % static_cast<std::size_t>(heads) != 0) {
        throw ConfigError("attention: width " + std::to_string(d) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const auto t = static_cast<std::size_t>(seq_len);
    if (seq_len < 1 || x.dim(0) % t != 0) {
        throw ShapeError("attention: " + std::to_string(x.dim(0)) + " rows are not a whole number of length-" +
                         std::to_string(seq_len) + " sequences");
    }
    const std::size_t batch = x.dim(0) / t;
    const std::size_t dh = d / static_cast<std::size_t>(heads);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Tensor qkv = add_bias(matmul(x, layer.qkv_weight), layer.qkv_bias);
    std::vector<Tensor> sequences;
    sequences.reserve(batch);
    std::vector<Tensor> head_out(static_cast<std::size_t>(heads));
    for (std::size_t b = 0; b < batch; ++b) {
        const Tensor rows = batch == 1 ? qkv : slice_rows(qkv, b * t, t);
        for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
            const Tensor q = slice_cols(rows, h * dh, dh);
            const Tensor k = slice_cols(rows, d + h * dh, dh);
            const Tensor v = slice_cols(rows, 2 * d + h * dh, dh);
            const Tensor w = softmax(scale(matmul_nt(q, k), inv_scale), 1);
            if (trace) trace->weights.push_back(w);
            head_out[h] = matmul(w, v);
        }
        sequences.push_back(heads == 1 ? head_out[0] : concat_cols(head_out));
    }
    const Tensor merged = batch == 1 ? sequences[0] : concat_rows(sequences);
    return add_bias(matmul(merged, layer.proj_weight), layer.proj_bias);
}

TokenSequence encoder_forward(const TokenSequence& tokens, const ViTConfig& config, const ModelParams& params,
                              std::vector<AttentionTrace>* traces) {
    const Tensor& in = tokens.tokens;
    if (in.rank() != 2 || in.dim(1) != static_cast<std::size_t>(config.width)) {
        throw ShapeError("encoder_forward: token width " + shape_str(in.shape()) + " does not match model width " +
                         std::to_string(config.width));
    }
    if (params.layers.size() != static_cast<std::size_t>(config.depth)) {
        throw ConfigError("encoder_forward: parameter set has " + std::to_string(params.layers.size()) +
                          " layers, config expects " + std::to_string(config.depth));
    }
    const int seq_len = tokens.length();
    Tensor x = in;
    if (traces) traces->clear();
    for (const EncoderLayer& layer : params.layers) {
        AttentionTrace* trace = nullptr;
        if (traces) trace = &traces->emplace_back();
        const Tensor normed = layer_norm(x, layer.norm1_weight, layer.norm1_bias, kLayerNormEps);
        x = add(x, attention(normed, layer, config.heads, seq_len, trace));
        const Tensor normed2 = layer_norm(x, layer.norm2_weight, layer.norm2_bias, kLayerNormEps);
        const Tensor hidden = gelu(add_bias(matmul(normed2, layer.fc1_weight), layer.fc1_bias));
        x = add(x, add_bias(matmul(hidden, layer.fc2_weight), layer.fc2_bias));
    }
    TokenSequence out = tokens;
    out.tokens = layer_norm(x, params.norm_weight, params.norm_bias, kLayerNormEps);
    return out;
}

Tensor extract_embedding(const TokenSequence& encoded, const ModelParams& params) {
    const auto t = static_cast<std::size_t>(encoded.length());
    const auto b = static_cast<std::size_t>(encoded.batch);
    if (encoded.tokens.rank() != 2 || encoded.tokens.dim(0) != t * b) {
        throw ShapeError("extract_embedding: tokens " + shape_str(encoded.tokens.shape()) + " do not hold " +
                         std::to_string(b) + " sequences of length " + std::to_string(t));
    }
    std::vector<std::size_t> cls_rows(b);
    for (std::size_t i = 0; i < b; ++i) cls_rows[i] = i * t;
    const Tensor cls = gather_rows(encoded.tokens, cls_rows);
    return l2_normalize_rows(add_bias(matmul(cls, params.head_weight), params.head_bias));
}

Tensor embed_images(const ViTConfig& config, const ModelParams& params, std::span<const Tensor> images) {
    for (const Tensor& img : images) {
        if (img.rank() != 3 || img.dim(0) != static_cast<std::size_t>(config.channels)) {
            throw ShapeError("embed_images: image " + shape_str(img.shape()) + " does not have " +
                             std::to_string(config.channels) + " channels");
        }
    }
    const Tensor patches = extract_patches_batch(images, config.grid);
    const TokenSequence tokens =
        embed_tokens(patches, params.embedding, config.grid, static_cast<int>(images.size()));
    return extract_embedding(encoder_forward(tokens, config, params), params);
}

// ---- checkpoint ------------------------------------------------------------

namespace {

std::int32_t variant_index(Variant v) { return static_cast<std::int32_t>(v); }

Variant variant_from_index(std::int32_t i, const ByteReader& r) {
    if (i < 0 || i > static_cast<std::int32_t>(Variant::Custom)) r.fail("bad variant code " + std::to_string(i));
    return static_cast<Variant>(i);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
    const ViTConfig& c = checkpoint.config;
    ByteWriter w;
    w.put_bytes(kCheckpointMagic);
    w.put_u32(kCheckpointVersion);
    for (std::int32_t v : {variant_index(c.variant), c.depth, c.width, c.heads, c.mlp_hidden(), c.embed_dim,
                           c.channels, c.grid.image_size, c.grid.patch_size, c.grid.stride}) {
        w.put_i32(v);
    }
    const auto blocks = checkpoint.params.named();
    w.put_u32(static_cast<std::uint32_t>(blocks.size()));
    for (const auto& [name, tensor] : blocks) {
        w.put_string(name);
        w.put_u32(static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t extent : tensor.shape()) w.put_u64(extent);
        for (double v : tensor.data()) w.put_f64(v);
    }
    return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    ByteReader r(bytes, "checkpoint");
    if (r.get_bytes(kCheckpointMagic.size()) != kCheckpointMagic) r.fail("bad magic");
    const std::uint32_t version = r.get_u32();
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

    Checkpoint ck;
    ViTConfig& c = ck.config;
    c.variant = variant_from_index(r.get_i32(), r);
    c.depth = r.get_i32();
    c.width = r.get_i32();
    c.heads = r.get_i32();
    const std::int32_t hidden = r.get_i32();
    c.embed_dim = r.get_i32();
    c.channels = r.get_i32();
    const int w = r.get_i32(), p = r.get_i32(), s = r.get_i32();
    if (c.width < 1 || hidden < 1) r.fail("bad model width");
    c.mlp_ratio = static_cast<double>(hidden) / c.width;
    try {
        c.grid = PatchGrid::make(w, p, s);
        c.validate();
    } catch (const Error& e) {
        r.fail(std::string("invalid model header: ") + e.what());
    }

    // Build the expected layout, then fill it block by block.
    Rng dummy(0);
    ck.params = ModelParams::initialize(c, dummy);
    auto expected = ck.params.named();
    const std::uint32_t count = r.get_u32();
    if (count != expected.size()) {
        r.fail("expected " + std::to_string(expected.size()) + " parameter blocks, found " + std::to_string(count));
    }
    for (auto& [name, tensor] : expected) {
        const std::string got = r.get_string();
        if (got != name) r.fail("expected block '" + name + "', found '" + got + "'");
        const std::uint32_t rank = r.get_u32();
        Shape shape(rank);
        for (auto& extent : shape) extent = r.get_u64();
        if (shape != tensor.shape()) {
            r.fail("block '" + name + "' has shape " + shape_str(shape) + ", expected " + shape_str(tensor.shape()));
        }
        for (double& v : tensor.mutable_data()) v = r.get_f64();
    }
    if (!r.at_end()) r.fail("trailing data");
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace earvit
