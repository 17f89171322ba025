#include "lgs/experiment.hpp"

#include "lgs/errors.hpp"

namespace lgs {

nlohmann::ordered_json to_json(const ReportRow& row) {
    nlohmann::ordered_json j;
    j["label"] = row.label;
    j["acc"] = row.metrics.accuracy;
    j["dice"] = row.metrics.dice;
    j["jaccard"] = row.metrics.jaccard;
    j["samples"] = row.metrics.samples;
    j["prompt_mode"] = to_string(row.prompt_mode);
    j["decoders"] = row.guide_decoders;
    j["data_fraction"] = row.data_fraction;
    j["seed"] = row.seed;
    j["best_epoch"] = row.best_epoch;
    return j;
}

AblationKind parse_ablation_kind(const std::string& text) {
    if (text == "decoders") return AblationKind::Decoders;
    if (text == "granularity") return AblationKind::Granularity;
    if (text == "fraction") return AblationKind::Fraction;
    throw ConfigError("unknown ablation '" + text + "' (expected decoders, granularity or fraction)");
}

std::string to_string(AblationKind kind) {
    switch (kind) {
        case AblationKind::Decoders: return "decoders";
        case AblationKind::Granularity: return "granularity";
        case AblationKind::Fraction: return "fraction";
    }
    return {};
}

std::vector<AblationRowSpec> ablation_rows(AblationKind kind) {
    switch (kind) {
        case AblationKind::Decoders:
            return {{"k0", PromptMode::None, 0, 1.0},
                    {"k1", PromptMode::S123, 1, 1.0},
                    {"k2", PromptMode::S123, 2, 1.0},
                    {"k3", PromptMode::S123, 3, 1.0}};
        case AblationKind::Granularity:
            return {{"none", PromptMode::None, 3, 1.0},
                    {"s12", PromptMode::S12, 3, 1.0},
                    {"s3", PromptMode::S3, 3, 1.0},
                    {"s123", PromptMode::S123, 3, 1.0}};
        case AblationKind::Fraction:
            return {{"text_0.10", PromptMode::S123, 3, 0.10},
                    {"text_0.15", PromptMode::S123, 3, 0.15},
                    {"text_0.25", PromptMode::S123, 3, 0.25},
                    {"text_0.50", PromptMode::S123, 3, 0.50},
                    {"text_1.00", PromptMode::S123, 3, 1.00},
                    {"image_only_1.00", PromptMode::None, 0, 1.00}};
    }
    return {};
}

ReportRow run_experiment(const Dataset& data, const TrainConfig& config, const std::string& label,
                         const std::function<void(const EpochLog&)>& on_epoch) {
    SegModel model = init_model(config, data.records.front().side);
    TrainState state = init_train_state(model, config);
    ParamSnapshot best = ParamSnapshot::take(model);
    TrainHooks hooks;
    hooks.on_best = [&](const SegModel& m, const TrainState&) { best = ParamSnapshot::take(m); };
    if (on_epoch) hooks.on_epoch = [&](const EpochLog& log, const SegModel&, const TrainState&) { on_epoch(log); };
    const TrainResult result = train(model, data, config, state, hooks);
    best.restore(model);

    ReportRow row;
    row.label = label;
    row.metrics = evaluate(model, data.subset(Split::Test));
    row.prompt_mode = config.prompt_mode;
    row.guide_decoders = config.prompt_mode == PromptMode::None ? 0 : config.guide_decoders;
    row.data_fraction = config.data_fraction;
    row.seed = config.seed;
    row.best_epoch = result.best_epoch;
    return row;
}

std::vector<ReportRow> run_ablation(AblationKind kind, const Dataset& data, const TrainConfig& base,
                                    const std::function<void(const ReportRow&)>& on_row) {
    std::vector<ReportRow> rows;
    for (const auto& spec : ablation_rows(kind)) {
        TrainConfig config = base;
        config.prompt_mode = spec.prompt_mode;
        config.guide_decoders = spec.guide_decoders;
        config.data_fraction = spec.data_fraction;
        rows.push_back(run_experiment(data, config, spec.label));
        if (on_row) on_row(rows.back());
    }
    return rows;
}

}  // namespace lgs
