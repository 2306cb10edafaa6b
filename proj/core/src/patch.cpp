#include "earvit/patch.hpp"

#include <charconv>

#include "earvit/error.hpp"

namespace earvit {

PatchGrid PatchGrid::make(int image_size, int patch_size, int stride) {
    const std::string what = "grid (W=" + std::to_string(image_size) + ", P=" + std::to_string(patch_size) +
                             ", S=" + std::to_string(stride) + "): ";
    if (image_size < 1 || patch_size < 1) throw GridError(what + "image and patch sizes must be positive");
    if (patch_size > image_size) throw GridError(what + "patch larger than image");
    if (stride < 1) throw GridError(what + "stride must be at least 1");
    if (stride > patch_size) throw GridError(what + "stride exceeds patch size, windows would leave gaps");
    if ((image_size - patch_size) % stride != 0) {
        throw GridError(what + "(W - P) must be divisible by S so no patch is truncated, but (" +
                        std::to_string(image_size) + " - " + std::to_string(patch_size) + ") mod " +
                        std::to_string(stride) + " = " +
                        std::to_string((image_size - patch_size) % stride));
    }
    return PatchGrid{image_size, patch_size, stride};
}

std::string PatchGrid::label() const {
    return "p" + std::to_string(patch_size) + "_s" + std::to_string(stride);
}

PatchGrid PatchGrid::parse_label(std::string_view label, int image_size) {
    auto fail = [&] { return GridError("malformed grid label '" + std::string(label) + "', expected p{P}_s{S}"); };
    if (label.size() < 5 || label[0] != 'p') throw fail();
    const auto sep = label.find("_s");
    if (sep == std::string_view::npos) throw fail();
    int p = 0, s = 0;
    const auto pp = label.substr(1, sep - 1);
    const auto ss = label.substr(sep + 2);
    auto r1 = std::from_chars(pp.data(), pp.data() + pp.size(), p);
    auto r2 = std::from_chars(ss.data(), ss.data() + ss.size(), s);
    if (r1.ec != std::errc{} || r1.ptr != pp.data() + pp.size() || r2.ec != std::errc{} ||
        r2.ptr != ss.data() + ss.size()) {
        throw fail();
    }
    return make(image_size, p, s);
}

int patch_count(int image_size, int patch_size, int stride) {
    return PatchGrid::make(image_size, patch_size, stride).count();
}

std::vector<int> coverage_map(const PatchGrid& grid) {
    const int w = grid.image_size;
    std::vector<int> counts(static_cast<std::size_t>(w) * w, 0);
    for (int r = 0; r < grid.per_side(); ++r)
        for (int c = 0; c < grid.per_side(); ++c)
            for (int y = 0; y < grid.patch_size; ++y)
                for (int x = 0; x < grid.patch_size; ++x)
                    ++counts[static_cast<std::size_t>(r * grid.stride + y) * w + (c * grid.stride + x)];
    return counts;
}

namespace {

void copy_patches(std::span<const double> img, std::size_t channels, const PatchGrid& grid, double* out) {
    const std::size_t w = grid.image_size, p = grid.patch_size, s = grid.stride;
    const std::size_t side = grid.per_side();
    const std::size_t row_len = channels * p * p;
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            double* dst = out + (r * side + c) * row_len;
            for (std::size_t ch = 0; ch < channels; ++ch)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x)
                        *dst++ = img[ch * w * w + (r * s + y) * w + (c * s + x)];
        }
    }
}

std::size_t checked_channels(const Tensor& image, const PatchGrid& grid) {
    const auto w = static_cast<std::size_t>(grid.image_size);
    if (image.rank() != 3 || image.dim(1) != w || image.dim(2) != w) {
        throw ShapeError("extract_patches: image " + shape_str(image.shape()) + " does not match grid side " +
                         std::to_string(grid.image_size));
    }
    return image.dim(0);
}

}  // namespace

Tensor extract_patches(const Tensor& image, const PatchGrid& grid) {
    const std::size_t channels = checked_channels(image, grid);
    const std::size_t n = grid.count();
    const std::size_t row_len = channels * grid.patch_size * grid.patch_size;
    std::vector<double> out(n * row_len);
    copy_patches(image.data(), channels, grid, out.data());
    return Tensor({n, row_len}, std::move(out));
}

Tensor extract_patches_batch(std::span<const Tensor> images, const PatchGrid& grid) {
    if (images.empty()) throw ShapeError("extract_patches_batch: empty batch");
    const std::size_t channels = checked_channels(images[0], grid);
    const std::size_t n = grid.count();
    const std::size_t row_len = channels * grid.patch_size * grid.patch_size;
    std::vector<double> out(images.size() * n * row_len);
    for (std::size_t b = 0; b < images.size(); ++b) {
        if (checked_channels(images[b], grid) != channels) {
            throw ShapeError("extract_patches_batch: mixed channel counts in batch");
        }
        copy_patches(images[b].data(), channels, grid, out.data() + b * n * row_len);
    }
    return Tensor({images.size() * n, row_len}, std::move(out));
}

TokenSequence embed_tokens(const Tensor& patches, const PatchEmbedding& embedding, const PatchGrid& grid,
                           int batch) {
    const std::size_t n = grid.count();
    const std::size_t b = static_cast<std::size_t>(batch);
    if (batch < 1 || patches.rank() != 2 || patches.dim(0) != n * b) {
        throw ShapeError("embed_tokens: patches " + shape_str(patches.shape()) + " do not hold " +
                         std::to_string(batch) + " x " + std::to_string(n) + " patches");
    }
    if (embedding.weight.rank() != 2 || embedding.weight.dim(0) != patches.dim(1)) {
        throw ConfigError("embed_tokens: projection " + shape_str(embedding.weight.shape()) +
                          " cannot map patch rows of length " + std::to_string(patches.dim(1)));
    }
    const std::size_t d = embedding.weight.dim(1);
    if (embedding.position.rank() != 2 || embedding.position.dim(0) != n + 1 || embedding.position.dim(1) != d) {
        throw ConfigError("embed_tokens: positional table " + shape_str(embedding.position.shape()) +
                          " does not fit grid " + grid.label() + " (needs " + std::to_string(n + 1) + " x " +
                          std::to_string(d) + ")");
    }
    if (embedding.cls_token.numel() != d) {
        throw ConfigError("embed_tokens: class token " + shape_str(embedding.cls_token.shape()) +
                          " does not match width " + std::to_string(d));
    }
    const Tensor projected = add_bias(matmul(patches, embedding.weight), embedding.bias);
    const Tensor cls = reshape(embedding.cls_token, {1, d});
    std::vector<Tensor> parts;
    parts.reserve(2 * b);
    for (std::size_t i = 0; i < b; ++i) {
        parts.push_back(cls);
        parts.push_back(slice_rows(projected, i * n, n));
    }
    const Tensor stacked = concat_rows(parts);
    const Tensor tokens = add(stacked, tile_rows(embedding.position, b));
    return TokenSequence{tokens, grid, static_cast<int>(d), batch};
}

}  // namespace earvit
