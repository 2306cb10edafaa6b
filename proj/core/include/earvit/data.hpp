#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "earvit/tensor.hpp"

namespace earvit {

enum class Side { Left, Right, Unspecified };

std::string_view side_name(Side side);

// Decoded raster, interleaved row-major (y, x, channel), values in [0, 1].
struct RawImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> values;

    double at(int y, int x, int c = 0) const {
        return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// Binary and ASCII PGM/PPM (P2, P3, P5, P6), maxval up to 65535.
RawImage decode_image(std::string_view bytes, const std::string& name);
// 8-bit P5 (one channel) or P6 (three channels).
std::string encode_pnm(const RawImage& image);

// Half-pixel-centred bilinear resampling with edge clamping, per channel.
RawImage resize_bilinear(const RawImage& image, int width, int height);

inline constexpr double kNormMean = 0.5;
inline constexpr double kNormStd = 0.5;

// Converts to `channels` (gray replicated, or BT.601 luma), resizes to
// side x side, and standardizes with mean 0.5 / std 0.5. Result is
// [channels x side x side] with values in [-1, 1].
Tensor preprocess(const RawImage& image, int side, int channels);
Tensor preprocess(std::string_view bytes, const std::string& name, int side, int channels);

struct ImageRecord {
    std::string identity_key;  // "subject" or "subject/left"
    std::string subject_id;
    Side side = Side::Unspecified;
    std::filesystem::path path;  // absolute for loaded trees, relative for synthetic sets
    std::string image_id;        // path relative to the dataset root, '/'-separated
    int label = 0;               // index into DatasetIndex::identities
};

struct FileIssue {
    std::filesystem::path path;
    std::string message;
};

struct DatasetIndex {
    std::vector<ImageRecord> records;
    std::vector<std::string> identities;  // sorted identity keys
    std::vector<FileIssue> issues;        // skipped files and directories

    std::size_t size() const { return records.size(); }
    int num_classes() const { return static_cast<int>(identities.size()); }
};

// Scans root/<subject>/<side>/<image> where <side> is left|right (or l|r);
// images placed directly under root/<subject>/ get Side::Unspecified. Every
// candidate file is decoded once; failures are collected in `issues`.
// Ordering is lexicographic at every level.
DatasetIndex load_dataset(const std::filesystem::path& root);

struct LabeledImages {
    std::vector<Tensor> images;
    std::vector<int> labels;
    int num_classes = 0;
};

LabeledImages load_images(const DatasetIndex& index, int side, int channels);

// ---- synthetic identities ---------------------------------------------------

struct SynthSpec {
    int identities = 8;
    int images_per_identity = 16;
    int image_size = 32;
    double noise_std = 0.05;
    std::uint64_t seed = 0;
    bool with_sides = false;  // pairs identities as left/right of one subject
};

struct SyntheticDataset {
    DatasetIndex index;
    std::vector<RawImage> images;  // parallel to index.records, 8-bit quantized
};

// Noise-free pattern for one identity: an oriented sinusoidal grating with an
// identity-specific frequency plus a few Gaussian blobs.
RawImage synth_template(const SynthSpec& spec, int identity);

// Each image is its identity template plus i.i.d. Gaussian pixel noise,
// clamped to [0, 1] and quantized to 8 bits so that disk round-trips are
// lossless.
SyntheticDataset synth_dataset(const SynthSpec& spec);

// Writes the set in the directory layout understood by load_dataset.
void write_dataset(const SyntheticDataset& dataset, const std::filesystem::path& root);

LabeledImages preprocess_all(const SyntheticDataset& dataset, int side, int channels);

}  // namespace earvit
