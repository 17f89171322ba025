#include "lgs/train.hpp"

#include <cmath>

#include "lgs/errors.hpp"
#include "lgs/ops.hpp"

namespace lgs {

namespace {

constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kTrainStream = 2;

Tensor mask_tensor(const BinaryMask& mask, std::int64_t side) {
    return Tensor::from_data({1, side, side}, std::vector<float>(mask.begin(), mask.end()));
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr_min < lr_max) || lr_min < 0.0) throw ConfigError("learning rates must satisfy 0 <= lr_min < lr_max");
    if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw ConfigError("data fraction must be in (0, 1]");
    if (guide_decoders < 0 || guide_decoders > 3) {
        throw ConfigError("decoder count must be in 0..3, got " + std::to_string(guide_decoders));
    }
    if (zoom_probability < 0.0f || zoom_probability > 1.0f) throw ConfigError("zoom probability must be in [0, 1]");
    if (adamw.weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
}

ModelConfig TrainConfig::model_config(std::int64_t image_side) const {
    ModelConfig m;
    m.image_side = image_side;
    m.guide_decoders = guide_decoders;
    m.prompt_mode = prompt_mode;
    return m;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["lr_max"] = c.lr_max;
    j["lr_min"] = c.lr_min;
    j["weight_decay"] = c.adamw.weight_decay;
    j["beta1"] = c.adamw.beta1;
    j["beta2"] = c.adamw.beta2;
    j["adam_eps"] = c.adamw.eps;
    j["seed"] = c.seed;
    j["prompt_mode"] = to_string(c.prompt_mode);
    j["decoders"] = c.guide_decoders;
    j["data_fraction"] = c.data_fraction;
    j["zoom_probability"] = c.zoom_probability;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& key = it.key();
            if (key == "batch_size") c.batch_size = it->get<std::int64_t>();
            else if (key == "epochs") c.epochs = it->get<std::int64_t>();
            else if (key == "lr_max") c.lr_max = it->get<double>();
            else if (key == "lr_min") c.lr_min = it->get<double>();
            else if (key == "weight_decay") c.adamw.weight_decay = it->get<double>();
            else if (key == "beta1") c.adamw.beta1 = it->get<double>();
            else if (key == "beta2") c.adamw.beta2 = it->get<double>();
            else if (key == "adam_eps") c.adamw.eps = it->get<double>();
            else if (key == "seed") c.seed = it->get<std::uint64_t>();
            else if (key == "prompt_mode") c.prompt_mode = parse_prompt_mode(it->get<std::string>());
            else if (key == "decoders") c.guide_decoders = it->get<int>();
            else if (key == "data_fraction") c.data_fraction = it->get<double>();
            else if (key == "zoom_probability") c.zoom_probability = it->get<float>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

SegModel init_model(const TrainConfig& config, std::int64_t image_side) {
    config.validate();
    Rng rng(derive_seed(config.seed, kModelStream));
    return SegModel::init(config.model_config(image_side), grammar_vocab(), rng);
}

TrainState init_train_state(const SegModel& model, const TrainConfig& config) {
    TrainState s;
    s.optim = AdamWState::for_params(model.parameters());
    s.rng = Rng(derive_seed(config.seed, kTrainStream));
    return s;
}

std::vector<const SampleRecord*> take_fraction(const std::vector<const SampleRecord*>& records, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data fraction must be in (0, 1]");
    auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(records.size()) - 1e-9));
    n = std::max<std::size_t>(1, std::min(n, records.size()));
    return {records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::int64_t batches_per_epoch(std::size_t n_samples, std::int64_t batch_size) {
    return (static_cast<std::int64_t>(n_samples) + batch_size - 1) / batch_size;
}

Tensor image_tensor(const SampleRecord& r) { return Tensor::from_data({1, r.side, r.side}, r.image); }

EpochStats train_epoch(SegModel& model, const std::vector<const SampleRecord*>& train, const TrainConfig& config,
                       TrainState& state) {
    if (train.empty()) throw InputError("train_epoch: empty training split");
    const std::int64_t per_epoch = batches_per_epoch(train.size(), config.batch_size);
    const std::int64_t total_steps = per_epoch * config.epochs;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    state.rng.shuffle(order);

    ParamList params = model.parameters();
    EpochStats stats;
    stats.epoch = state.epoch + 1;
    double loss_total = 0.0;
    for (std::int64_t b = 0; b < per_epoch; ++b) {
        const auto begin = static_cast<std::size_t>(b * config.batch_size);
        const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
        const auto batch_n = static_cast<float>(end - begin);
        for (auto& p : params) p.tensor.zero_grad();
        double batch_loss = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const SampleRecord& r = *train[order[i]];
            std::vector<float> image = r.image;
            BinaryMask mask = r.mask;
            random_zoom(image, mask, r.side, state.rng, config.zoom_probability);
            Tensor input = Tensor::from_data({1, r.side, r.side}, std::move(image));
            Tensor probs = sigmoid(model.forward(input, r.prompt));
            Tensor loss = combined_loss(probs, mask_tensor(mask, r.side));
            batch_loss += loss.item();
            backward(scale(loss, 1.0f / batch_n));
        }
        const std::int64_t step = state.optim.step;
        const double lr = cosine_lr(std::min(step, total_steps), total_steps, config.lr_max, config.lr_min);
        adamw_step(params, state.optim, lr, config.adamw);
        batch_loss /= static_cast<double>(batch_n);
        stats.batch_losses.push_back(batch_loss);
        loss_total += batch_loss;
    }
    for (auto& p : params) p.tensor.zero_grad();
    stats.mean_loss = loss_total / static_cast<double>(per_epoch);
    ++state.epoch;
    return stats;
}

MetricsRecord evaluate(const Predictor& predict, const std::vector<const SampleRecord*>& split) {
    if (split.empty()) throw InputError("evaluate: empty split");
    MetricsRecord m;
    for (const SampleRecord* r : split) {
        const BinaryMask pred = predict(*r);
        const SegMetrics s = segmentation_metrics(pred, r->mask);
        m.accuracy += s.accuracy;
        m.dice += s.dice;
        m.jaccard += s.jaccard;
    }
    const auto n = static_cast<double>(split.size());
    m.accuracy /= n;
    m.dice /= n;
    m.jaccard /= n;
    m.samples = split.size();
    return m;
}

MetricsRecord evaluate(const SegModel& model, const std::vector<const SampleRecord*>& split) {
    return evaluate([&](const SampleRecord& r) { return model.predict(image_tensor(r), r.prompt).mask; }, split);
}

TrainResult train(SegModel& model, const Dataset& data, const TrainConfig& config, TrainState& state,
                  const TrainHooks& hooks) {
    config.validate();
    const auto train_split = take_fraction(data.subset(Split::Train), config.data_fraction);
    const auto val_split = data.subset(Split::Val);
    TrainResult result;
    result.best_epoch = state.best_epoch;
    result.best_val_dice = state.best_val_dice;
    while (state.epoch < config.epochs) {
        EpochStats stats = train_epoch(model, train_split, config, state);
        EpochLog log;
        log.epoch = stats.epoch;
        log.loss = stats.mean_loss;
        log.val_dice = val_split.empty() ? 0.0 : evaluate(model, val_split).dice;
        const bool improved = val_split.empty() || log.val_dice > state.best_val_dice;
        if (improved) {
            state.best_val_dice = log.val_dice;
            state.best_epoch = log.epoch;
            if (hooks.on_best) hooks.on_best(model, state);
        }
        if (hooks.on_epoch) hooks.on_epoch(log, model, state);
        result.log.push_back(log);
        result.epochs.push_back(std::move(stats));
    }
    result.best_epoch = state.best_epoch;
    result.best_val_dice = state.best_val_dice;
    return result;
}

ParamSnapshot ParamSnapshot::take(const SegModel& model) {
    ParamSnapshot s;
    for (const auto& p : model.parameters()) s.values_.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return s;
}

void ParamSnapshot::restore(SegModel& model) const {
    auto params = model.parameters();
    if (params.size() != values_.size()) throw ContractError("snapshot does not match model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.mutable_data();
        if (dst.size() != values_[i].size()) throw ContractError("snapshot does not match " + params[i].name);
        std::copy(values_[i].begin(), values_[i].end(), dst.begin());
    }
}

}  // namespace lgs
