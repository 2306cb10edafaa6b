#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "earvit/data.hpp"
#include "earvit/margin.hpp"
#include "earvit/vit.hpp"

namespace earvit {

struct TrainConfig {
    double base_lr = 0.001;
    double weight_decay = 0.1;
    int epochs = 100;
    int warmup_epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // global gradient-norm clip; 0 disables

    void validate() const;
};

struct OptimizerState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::int64_t step = 0;

    static OptimizerState for_params(std::span<const NamedTensor> params);
};

// One AdamW update from the gradients currently stored on `params`:
// decoupled decay p <- p * (1 - lr * wd), then the bias-corrected Adam step.
// A non-finite gradient aborts with NumericError naming the block, before any
// parameter is touched.
void adamw_step(std::span<NamedTensor> params, OptimizerState& state, double lr, const TrainConfig& config);

// Linear warmup from base_lr / W up to base_lr over W = warmup_epochs *
// steps_per_epoch steps, constant afterwards.
double lr_schedule(std::int64_t step, std::int64_t steps_per_epoch, const TrainConfig& config);

struct StepRecord {
    std::int64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    Checkpoint final_checkpoint;
    Checkpoint best_checkpoint;  // lowest mean epoch loss
    double best_loss = 0.0;
    Tensor class_weights;
    std::vector<StepRecord> log;
};

// Called at the end of every epoch with the current model; `improved` is set
// when the epoch mean loss is the best so far.
using EpochCallback = std::function<void(int epoch, const Checkpoint& current, bool improved)>;

// Called after every optimizer step with the updated model and prototypes.
using StepCallback = std::function<void(const StepRecord& record, const ModelParams& params, const Tensor& class_weights)>;

// Shuffled mini-batch training with the margin loss over sampled classes.
// (config.seed, loss_seed, data) determine every stochastic choice: init,
// shuffling and class sampling.
TrainResult train(const ViTConfig& model, const TrainConfig& config, const MarginSpec& margin,
                  std::uint64_t loss_seed, const LabeledImages& data, const EpochCallback& on_epoch = {},
                  const StepCallback& on_step = {});

// "step,epoch,lr,loss" with one row per optimizer step.
std::string training_log_csv(std::span<const StepRecord> log);

}  // namespace earvit
