#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgs/data.hpp"
#include "lgs/model.hpp"
#include "lgs/optim.hpp"

namespace lgs {

struct TrainConfig {
    std::int64_t batch_size = 32;
    std::int64_t epochs = 40;
    double lr_max = 3e-4;
    double lr_min = 1e-6;
    AdamWConfig adamw;
    std::uint64_t seed = 0;
    PromptMode prompt_mode = PromptMode::S123;
    int guide_decoders = 3;
    double data_fraction = 1.0;
    float zoom_probability = 0.1f;

    void validate() const;  // throws ConfigError
    ModelConfig model_config(std::int64_t image_side = 64) const;
};

nlohmann::ordered_json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Everything besides the weights needed to continue training bitwise.
struct TrainState {
    AdamWState optim;
    Rng rng;
    std::int64_t epoch = 0;  // completed epochs
    double best_val_dice = -1.0;
    std::int64_t best_epoch = -1;
};

/// Model and optimizer state seeded from config.seed.
SegModel init_model(const TrainConfig& config, std::int64_t image_side = 64);
TrainState init_train_state(const SegModel& model, const TrainConfig& config);

/// First ceil(fraction * n) training records, in dataset order.
std::vector<const SampleRecord*> take_fraction(const std::vector<const SampleRecord*>& records, double fraction);

std::int64_t batches_per_epoch(std::size_t n_samples, std::int64_t batch_size);

struct EpochStats {
    std::int64_t epoch = 0;
    double mean_loss = 0.0;
    std::vector<double> batch_losses;
};

/// One pass in seeded shuffled order; per batch: zoom augmentation, forward,
/// mean combined loss, backward, AdamW with the cosine-annealed rate. The
/// last partial batch is kept.
EpochStats train_epoch(SegModel& model, const std::vector<const SampleRecord*>& train, const TrainConfig& config,
                       TrainState& state);

struct MetricsRecord {
    double accuracy = 0.0;
    double dice = 0.0;
    double jaccard = 0.0;
    std::size_t samples = 0;
};

using Predictor = std::function<BinaryMask(const SampleRecord&)>;

/// Uniform mean of per-sample metrics. No augmentation.
MetricsRecord evaluate(const Predictor& predict, const std::vector<const SampleRecord*>& split);
MetricsRecord evaluate(const SegModel& model, const std::vector<const SampleRecord*>& split);

Tensor image_tensor(const SampleRecord& r);

struct EpochLog {
    std::int64_t epoch = 0;
    double loss = 0.0;
    double val_dice = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::vector<EpochStats> epochs;
    std::int64_t best_epoch = -1;
    double best_val_dice = 0.0;
};

struct TrainHooks {
    /// Called after each epoch with the model at that epoch.
    std::function<void(const EpochLog&, const SegModel&, const TrainState&)> on_epoch;
    /// Called whenever validation Dice improves.
    std::function<void(const SegModel&, const TrainState&)> on_best;
};

/// Trains until config.epochs are complete, starting from `state.epoch`,
/// scoring the validation split after every epoch. The model ends holding the
/// last-epoch weights; use hooks.on_best to keep the best-val ones.
TrainResult train(SegModel& model, const Dataset& data, const TrainConfig& config, TrainState& state,
                  const TrainHooks& hooks = {});

/// Copy of every parameter value, restorable into the same model.
class ParamSnapshot {
public:
    static ParamSnapshot take(const SegModel& model);
    void restore(SegModel& model) const;

private:
    std::vector<std::vector<float>> values_;
};

}  // namespace lgs
