#include "earvit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "earvit/error.hpp"

namespace earvit {

void TrainConfig::validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
    if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
    if (warmup_epochs < 0 || warmup_epochs > epochs) throw ConfigError("train.warmup_epochs must lie in [0, epochs]");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
    if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be non-negative");
}

OptimizerState OptimizerState::for_params(std::span<const NamedTensor> params) {
    OptimizerState s;
    for (const auto& p : params) {
        s.first_moment.emplace_back(p.tensor.numel(), 0.0);
        s.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
    return s;
}

void adamw_step(std::span<NamedTensor> params, OptimizerState& state, double lr, const TrainConfig& config) {
    if (!(lr >= 0.0)) throw ParameterError("adamw_step: learning rate must be non-negative");
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
        throw ShapeError("adamw_step: optimizer state does not match parameter list");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor& t = params[k].tensor;
        if (state.first_moment[k].size() != t.numel() || state.second_moment[k].size() != t.numel()) {
            throw ShapeError("adamw_step: moment buffers for '" + params[k].name + "' do not match " +
                             shape_str(t.shape()));
        }
        if (!t.has_grad()) continue;
        for (double g : t.grad()) {
            if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient in '" + params[k].name + "'");
        }
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    const double decay = 1.0 - lr * config.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& tensor = params[k].tensor;
        auto p = tensor.mutable_data();
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        const bool has = tensor.has_grad();
        const auto g = has ? tensor.grad() : std::span<const double>{};
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            p[i] *= decay;
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
}

double lr_schedule(std::int64_t step, std::int64_t steps_per_epoch, const TrainConfig& config) {
    const std::int64_t warmup = static_cast<std::int64_t>(config.warmup_epochs) * std::max<std::int64_t>(steps_per_epoch, 1);
    if (warmup <= 0 || step >= warmup) return config.base_lr;
    return config.base_lr * static_cast<double>(std::max<std::int64_t>(step, 0) + 1) / static_cast<double>(warmup);
}

namespace {

void clip_gradients(std::span<NamedTensor> params, double max_norm) {
    double ss = 0.0;
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) ss += g * g;
    }
    const double norm = std::sqrt(ss);
    if (!(norm > max_norm)) return;
    const double f = max_norm / norm;
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double& g : p.tensor.mutable_grad()) g *= f;
    }
}

}  // namespace

TrainResult train(const ViTConfig& model, const TrainConfig& config, const MarginSpec& margin,
                  std::uint64_t loss_seed, const LabeledImages& data, const EpochCallback& on_epoch,
                  const StepCallback& on_step) {
    model.validate();
    config.validate();
    margin.validate();
    if (data.images.empty() || data.images.size() != data.labels.size()) {
        throw ConfigError("train: dataset is empty or labels do not match images");
    }
    if (data.num_classes < 2) {
        throw ConfigError("train: dataset has a single identity, impostor pairs would be impossible");
    }
    const auto side = static_cast<std::size_t>(model.grid.image_size);
    for (const Tensor& img : data.images) {
        if (img.shape() != Shape{static_cast<std::size_t>(model.channels), side, side}) {
            throw ConfigError("train: image " + shape_str(img.shape()) + " does not match model input [" +
                              std::to_string(model.channels) + "x" + std::to_string(side) + "x" +
                              std::to_string(side) + "]");
        }
    }

    Rng init_rng(mix_seed(config.seed, 1));
    Rng proto_rng(mix_seed(config.seed, 2));
    Rng shuffle_rng(mix_seed(config.seed, 3));
    Rng class_rng(loss_seed);

    TrainResult result;
    result.final_checkpoint = Checkpoint{model, ModelParams::initialize(model, init_rng)};
    ModelParams& params = result.final_checkpoint.params;

    std::vector<double> proto(static_cast<std::size_t>(data.num_classes) * model.embed_dim);
    for (double& v : proto) v = proto_rng.truncated_normal(0.02);
    result.class_weights = Tensor({static_cast<std::size_t>(data.num_classes), static_cast<std::size_t>(model.embed_dim)},
                                  std::move(proto), true);

    std::vector<NamedTensor> trainable = params.named();
    trainable.push_back({"margin.prototypes", result.class_weights});
    OptimizerState state = OptimizerState::for_params(trainable);

    const std::size_t n = data.images.size();
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    const auto steps_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);

    result.best_checkpoint = Checkpoint{model, params.clone()};
    result.best_loss = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(n);
    std::int64_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t count = std::min(batch, n - start);
            std::vector<Tensor> images;
            std::vector<int> labels;
            for (std::size_t i = 0; i < count; ++i) {
                images.push_back(data.images[order[start + i]]);
                labels.push_back(data.labels[order[start + i]]);
            }
            const ClassSubset subset = sample_classes(data.num_classes, labels, margin.sample_rate, class_rng);

            for (auto& p : trainable) p.tensor.zero_grad();
            const Tensor embeddings = embed_images(model, params, images);
            Tensor loss = cosface_loss(embeddings, labels, result.class_weights, margin, subset);
            loss.backward();
            if (config.clip_norm > 0.0) clip_gradients(trainable, config.clip_norm);

            const double lr = lr_schedule(step, steps_per_epoch, config);
            adamw_step(trainable, state, lr, config);
            result.log.push_back({step, epoch, lr, loss.item()});
            if (on_step) on_step(result.log.back(), params, result.class_weights);
            epoch_loss += loss.item() * static_cast<double>(count);
            ++step;
        }
        epoch_loss /= static_cast<double>(n);
        const bool improved = epoch_loss < result.best_loss;
        if (improved) {
            result.best_loss = epoch_loss;
            result.best_checkpoint = Checkpoint{model, params.clone()};
        }
        if (on_epoch) on_epoch(epoch, result.final_checkpoint, improved);
    }
    return result;
}

std::string training_log_csv(std::span<const StepRecord> log) {
    std::string out = "step,epoch,lr,loss\n";
    char buf[128];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%lld,%d,%.10g,%.10g\n", static_cast<long long>(r.step), r.epoch, r.lr, r.loss);
        out += buf;
    }
    return out;
}

}  // namespace earvit
