#include "earvit/margin.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "earvit/error.hpp"

namespace earvit {

void MarginSpec::validate() const {
    if (!(scale > 0.0)) throw ConfigError("loss.scale must be positive");
    if (!(margin >= 0.0)) throw ConfigError("loss.margin must be non-negative");
    if (!(sample_rate > 0.0 && sample_rate <= 1.0)) throw ConfigError("loss.sample_rate must lie in (0, 1]");
}

ClassSubset all_classes(int num_classes) {
    ClassSubset all(static_cast<std::size_t>(std::max(num_classes, 0)));
    for (int i = 0; i < num_classes; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
}

ClassSubset sample_classes(int num_classes, std::span<const int> batch_labels, double rate, Rng& rng) {
    if (!(rate > 0.0 && rate <= 1.0)) throw ParameterError("sample_classes: rate must lie in (0, 1]");
    if (batch_labels.empty()) throw ContractError("sample_classes: empty batch");
    if (num_classes < 1) throw ParameterError("sample_classes: no classes");

    std::vector<char> positive(static_cast<std::size_t>(num_classes), 0);
    std::size_t distinct = 0;
    for (int l : batch_labels) {
        if (l < 0 || l >= num_classes) {
            throw ContractError("sample_classes: label " + std::to_string(l) + " outside [0, " +
                                std::to_string(num_classes) + ")");
        }
        if (!positive[static_cast<std::size_t>(l)]) {
            positive[static_cast<std::size_t>(l)] = 1;
            ++distinct;
        }
    }
    // The small slack keeps products like 0.7 * 10 from rounding up a class.
    const auto quota = static_cast<std::size_t>(std::ceil(rate * num_classes - 1e-9));
    const std::size_t target = std::max(quota, distinct);

    std::vector<int> negatives;
    negatives.reserve(static_cast<std::size_t>(num_classes) - distinct);
    for (int c = 0; c < num_classes; ++c) {
        if (!positive[static_cast<std::size_t>(c)]) negatives.push_back(c);
    }
    const std::size_t wanted = target - distinct;
    // Partial Fisher-Yates: the first `wanted` slots become a uniform sample.
    for (std::size_t i = 0; i < wanted; ++i) {
        const std::size_t j = i + rng.below(negatives.size() - i);
        std::swap(negatives[i], negatives[j]);
    }

    ClassSubset subset;
    subset.reserve(target);
    for (int c = 0; c < num_classes; ++c) {
        if (positive[static_cast<std::size_t>(c)]) subset.push_back(c);
    }
    subset.insert(subset.end(), negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(wanted));
    std::sort(subset.begin(), subset.end());
    return subset;
}

Tensor cosface_loss(const Tensor& embeddings, std::span<const int> labels, const Tensor& weights,
                    const MarginSpec& spec, const ClassSubset& subset) {
    spec.validate();
    if (embeddings.rank() != 2 || weights.rank() != 2 || embeddings.dim(1) != weights.dim(1)) {
        throw ShapeError("cosface_loss: embeddings " + shape_str(embeddings.shape()) + " and prototypes " +
                         shape_str(weights.shape()) + " disagree");
    }
    const std::size_t batch = embeddings.dim(0), dim = embeddings.dim(1);
    if (labels.size() != batch) throw ShapeError("cosface_loss: label count does not match batch");
    if (subset.empty()) throw ContractError("cosface_loss: empty class subset");
    if (!std::is_sorted(subset.begin(), subset.end())) throw ContractError("cosface_loss: subset must be sorted");

    const auto e = embeddings.data();
    for (std::size_t r = 0; r < batch; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < dim; ++c) ss += e[r * dim + c] * e[r * dim + c];
        if (std::abs(std::sqrt(ss) - 1.0) > 1e-6) {
            throw ContractError("cosface_loss: embedding " + std::to_string(r) + " is not unit norm");
        }
    }

    // Map class ids to their column in the subset.
    std::vector<int> local(labels.size());
    std::vector<std::size_t> rows(subset.size());
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (subset[i] < 0 || static_cast<std::size_t>(subset[i]) >= weights.dim(0)) {
            throw ContractError("cosface_loss: subset class " + std::to_string(subset[i]) + " has no prototype");
        }
        rows[i] = static_cast<std::size_t>(subset[i]);
    }
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const auto it = std::lower_bound(subset.begin(), subset.end(), labels[b]);
        if (it == subset.end() || *it != labels[b]) {
            throw ContractError("cosface_loss: label " + std::to_string(labels[b]) + " is not in the class subset");
        }
        local[b] = static_cast<int>(it - subset.begin());
    }

    const Tensor prototypes = l2_normalize_rows(gather_rows(weights, rows));
    const Tensor cosine = matmul_nt(embeddings, prototypes);
    std::vector<double> shift(batch * subset.size(), 0.0);
    for (std::size_t b = 0; b < batch; ++b) shift[b * subset.size() + static_cast<std::size_t>(local[b])] = spec.margin;
    const Tensor logits = scale(sub(cosine, Tensor(cosine.shape(), std::move(shift))), spec.scale);
    return cross_entropy(logits, local);
}

}  // namespace earvit
