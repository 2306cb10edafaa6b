// Early-training behaviour on the toy problem. Slow relative to the other
// unit tests: every step is followed by a full-dataset loss evaluation.
#include "doctest.h"
#include "earvit/trainer.hpp"

using namespace earvit;

namespace {

struct Stop {};

// Full-dataset loss (all classes) before and after each of the first
// `steps` optimizer steps of the toy run.
std::vector<double> early_losses(std::uint64_t seed, const MarginSpec& margin, int steps) {
    SynthSpec s;  // 8 identities x 16 images, 32 px, noise 0.05
    s.seed = seed;
    auto data = preprocess_all(synth_dataset(s), 32, 1);

    ViTConfig model;
    model.depth = 2;
    model.width = 64;
    model.heads = 4;
    model.channels = 1;
    model.grid = PatchGrid::make(32, 8, 4);
    TrainConfig cfg;
    cfg.epochs = 75;
    cfg.warmup_epochs = 10;
    cfg.batch_size = 32;
    cfg.seed = seed;

    auto full_loss = [&](const ModelParams& params, const Tensor& protos) {
        NoGradGuard guard;
        auto e = embed_images(model, params, data.images);
        return cosface_loss(e, data.labels, protos, margin, all_classes(data.num_classes)).item();
    };

    std::vector<double> losses;
    bool first = true;
    try {
        train(model, cfg, margin, seed, data, {},
              [&](const StepRecord& rec, const ModelParams& params, const Tensor& protos) {
                  if (first) {
                      // Initial loss from the same seeds, recomputed outside the run.
                      Rng init(mix_seed(seed, 1));
                      Rng proto_rng(mix_seed(seed, 2));
                      auto p0 = ModelParams::initialize(model, init);
                      std::vector<double> w(static_cast<std::size_t>(data.num_classes) * kEmbeddingDim);
                      for (double& v : w) v = proto_rng.truncated_normal(0.02);
                      losses.push_back(full_loss(p0, Tensor(protos.shape(), std::move(w))));
                      first = false;
                  }
                  losses.push_back(full_loss(params, protos));
                  if (rec.step + 1 == steps) throw Stop{};
              });
    } catch (const Stop&) {
    }
    return losses;
}

int count_decreasing(const MarginSpec& margin, int seeds, int steps) {
    int good = 0;
    for (int seed = 0; seed < seeds; ++seed) {
        auto losses = early_losses(static_cast<std::uint64_t>(seed), margin, steps);
        REQUIRE(losses.size() == static_cast<std::size_t>(steps + 1));
        bool ok = true;
        for (int i = 1; i <= steps; ++i) ok = ok && losses[i] < losses[i - 1];
        if (ok) {
            ++good;
        } else {
            MESSAGE("scale " << margin.scale << ": full-set loss not strictly decreasing over the first " << steps
                             << " steps for seed " << seed);
        }
        CHECK(losses.back() < losses.front());
    }
    return good;
}

}  // namespace

TEST_CASE("toy loss decreases strictly over the first 10 steps") {
    CHECK(count_decreasing(MarginSpec{16.0, 0.35, 0.3}, 10, 10) >= 9);
}

TEST_CASE("toy loss at the default scale decreases overall") {
    // With s = 64 the first steps overshoot on some seeds; only the net
    // decrease is asserted, individual failures are logged.
    count_decreasing(MarginSpec{}, 3, 10);
}
