#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "earvit/tensor.hpp"

namespace earvit {

// Square patch grid over a square image: side W, patch side P, stride S.
// Valid grids satisfy P <= W, 1 <= S <= P and (W - P) % S == 0, so every
// window lies fully inside the image and neighbouring windows never leave
// gaps. Token count is ((W - P) / S + 1)^2.
struct PatchGrid {
    int image_size = 0;
    int patch_size = 0;
    int stride = 0;

    // Validating constructor; throws GridError.
    static PatchGrid make(int image_size, int patch_size, int stride);

    int per_side() const { return (image_size - patch_size) / stride + 1; }
    int count() const { return per_side() * per_side(); }
    bool overlapping() const { return stride < patch_size; }

    // "p28_s14"
    std::string label() const;
    // Parses "p{P}_s{S}" and binds it to the given image size.
    static PatchGrid parse_label(std::string_view label, int image_size);

    friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

int patch_count(int image_size, int patch_size, int stride);

// How many windows cover each pixel, row-major over the W x W image.
std::vector<int> coverage_map(const PatchGrid& grid);

// image [C x W x W] -> [N x (C*P*P)]. Patch r*per_side + c is the window with
// top-left corner (r*S, c*S). Each row is flattened channel-major, then
// row-major within the window.
Tensor extract_patches(const Tensor& image, const PatchGrid& grid);

// Stacked patches for a batch: [B*N x (C*P*P)], image b occupying rows
// [b*N, (b+1)*N).
Tensor extract_patches_batch(std::span<const Tensor> images, const PatchGrid& grid);

// Tokens for `batch` images, stacked as [batch*(N+1) x D]. Row
// b*(N+1) is the class token of image b.
struct TokenSequence {
    Tensor tokens;
    PatchGrid grid;
    int width = 0;
    int batch = 1;

    int length() const { return grid.count() + 1; }
};

struct PatchEmbedding {
    Tensor weight;     // [C*P*P x D]
    Tensor bias;       // [D]
    Tensor position;   // [(N+1) x D]
    Tensor cls_token;  // [1 x D]
};

// token 0 = cls + pos[0]; token k = patch_{k-1} * W + b + pos[k].
TokenSequence embed_tokens(const Tensor& patches, const PatchEmbedding& embedding,
                           const PatchGrid& grid, int batch = 1);

}  // namespace earvit
