#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "earvit/rng.hpp"
#include "earvit/tensor.hpp"

namespace earvit {

// Large-margin cosine loss settings. Scale and margin have conventional
// defaults; sample_rate is the fraction of classes kept in each softmax.
struct MarginSpec {
    double scale = 64.0;
    double margin = 0.35;
    double sample_rate = 0.3;

    void validate() const;
};

// Sorted class ids participating in one loss evaluation.
using ClassSubset = std::vector<int>;

// Keeps every class present in `batch_labels` and tops the set up with
// negatives drawn uniformly without replacement, so that the result holds
// max(ceil(rate * num_classes), #distinct positives) classes.
ClassSubset sample_classes(int num_classes, std::span<const int> batch_labels, double rate, Rng& rng);

ClassSubset all_classes(int num_classes);

// Mean over the batch of
//   -log( e^{s(cos_y - m)} / (e^{s(cos_y - m)} + sum_{j != y, j in subset} e^{s cos_j}) )
// where cos_j = <embedding, w_j / |w_j|>. `weights` is the raw
// [num_classes x dim] prototype matrix; rows of the subset are normalized
// inside the graph so gradients reach the raw prototypes.
Tensor cosface_loss(const Tensor& embeddings, std::span<const int> labels, const Tensor& weights,
                    const MarginSpec& spec, const ClassSubset& subset);

}  // namespace earvit
