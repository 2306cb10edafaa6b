#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "earvit/data.hpp"
#include "earvit/vit.hpp"

namespace earvit {

// Unit-norm embeddings keyed by identity, one row per image.
class EmbeddingSet {
   public:
    explicit EmbeddingSet(std::size_t dim = kEmbeddingDim) : dim_(dim) {}

    // Rejects rows whose norm is off by more than 1e-6.
    void add(std::string identity_key, std::string image_id, std::span<const double> vec);

    std::size_t size() const { return keys_.size(); }
    std::size_t dim() const { return dim_; }
    std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
    const std::string& identity_key(std::size_t i) const { return keys_[i]; }
    const std::string& image_id(std::size_t i) const { return image_ids_[i]; }

   private:
    std::size_t dim_;
    std::vector<double> values_;
    std::vector<std::string> keys_;
    std::vector<std::string> image_ids_;
};

// One embedding per record, in index order. Images must already be
// preprocessed to the checkpoint's input side; a mismatch raises ConfigError.
EmbeddingSet extract_embeddings(const Checkpoint& checkpoint, const DatasetIndex& index,
                                std::span<const Tensor> images, std::size_t batch_size = 32);
// Reads and preprocesses the index's files at `preprocess_side`.
EmbeddingSet extract_embeddings(const Checkpoint& checkpoint, const DatasetIndex& index, int preprocess_side);

inline constexpr std::string_view kEmbeddingMagic = "EARVITEM";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

// Header (magic, version, count, dim), float32 LE rows, then a manifest of
// (identity_key, image_id) strings.
std::string serialize_embeddings(const EmbeddingSet& set);
EmbeddingSet deserialize_embeddings(std::string_view bytes);

using IndexPair = std::pair<std::uint32_t, std::uint32_t>;

struct PairSet {
    std::vector<IndexPair> genuine;   // every same-identity pair, i < j, sorted
    std::vector<IndexPair> impostor;  // sampled cross-identity pairs, i < j, sorted
    std::uint64_t seed = 0;
};

// Enumerates all genuine pairs and samples min(floor(ratio * #genuine),
// #cross-identity pairs) impostor pairs uniformly without replacement.
PairSet make_pairs(const EmbeddingSet& set, double impostor_ratio, std::uint64_t seed);

struct ScoredPairs {
    std::vector<double> genuine;
    std::vector<double> impostor;
};

// Dot-product (cosine) similarity of each pair, clamped to [-1, 1].
ScoredPairs score_pairs(const EmbeddingSet& set, const PairSet& pairs);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // from (0, 0) to (1, 1)
    double auc = 0.0;
};

// Thresholds at every distinct score; tied scores move TPR and FPR together,
// so the trapezoid area equals the Mann-Whitney statistic with ties as 1/2.
RocCurve roc_auc(std::span<const double> genuine, std::span<const double> impostor);

struct EvalSettings {
    int repeats = 5;
    double impostor_ratio = 10.0;
    std::uint64_t seed = 0;
};

struct RepeatResult {
    std::vector<double> aucs;
    double mean = 0.0;
    double deviation = 0.0;  // sample standard deviation, 0 for one repeat

    // "0.9834 ± 0.0011"
    std::string formatted() const;
};

// Genuine pairs are fixed; impostors are redrawn with seeds seed + 0 ..
// seed + repeats - 1.
RepeatResult repeat_eval(const EmbeddingSet& set, const EvalSettings& settings);
RepeatResult repeat_eval(const Checkpoint& checkpoint, const DatasetIndex& index, std::span<const Tensor> images,
                         const EvalSettings& settings);

// (auc_a - auc_b) / auc_b * 100
double percentage_variation(double auc_a, double auc_b);

struct ReportRow {
    std::string model_label;  // "ViT_T_p28_s14"
    std::string dataset;
    int patch = 0;
    int stride = 0;
    double mean_auc = 0.0;
    double std_auc = 0.0;
};

struct PvRow {
    std::string setting_a;
    std::string setting_b;
    double auc_a = 0.0;
    double auc_b = 0.0;
    double pv_percent = 0.0;
};

std::string report_csv(std::span<const ReportRow> rows);
std::vector<ReportRow> parse_report_csv(std::string_view text);

std::string pv_csv(std::span<const PvRow> rows);
std::vector<PvRow> parse_pv_csv(std::string_view text);

PvRow compare_rows(const ReportRow& a, const ReportRow& b);

// Pairs every half-stride row (S == P/2) with the matching non-overlapping row
// (S == P) of the same model family and dataset, A = overlapping.
std::vector<PvRow> overlap_pv_table(std::span<const ReportRow> rows);

// Model family of a label, i.e. the label without its "_p{P}_s{S}" suffix.
std::string model_family(std::string_view model_label);

}  // namespace earvit
