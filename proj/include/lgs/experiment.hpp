#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgs/train.hpp"

namespace lgs {

/// One line of an experiment report.
struct ReportRow {
    std::string label;
    MetricsRecord metrics;
    PromptMode prompt_mode = PromptMode::S123;
    int guide_decoders = 3;
    double data_fraction = 1.0;
    std::uint64_t seed = 0;
    std::int64_t best_epoch = -1;
};

nlohmann::ordered_json to_json(const ReportRow& row);

enum class AblationKind { Decoders, Granularity, Fraction };
AblationKind parse_ablation_kind(const std::string& text);  // throws ConfigError
std::string to_string(AblationKind kind);

struct AblationRowSpec {
    std::string label;
    PromptMode prompt_mode;
    int guide_decoders;
    double data_fraction;
};

/// decoders: k0..k3 (k0 text-free); granularity: none, s12, s3, s123;
/// fraction: 10/15/25/50/100% multimodal plus a text-free 100% baseline.
std::vector<AblationRowSpec> ablation_rows(AblationKind kind);

/// Train with `config` (best-val weights kept) and score the test split.
ReportRow run_experiment(const Dataset& data, const TrainConfig& config, const std::string& label,
                         const std::function<void(const EpochLog&)>& on_epoch = {});

/// Every row of one ablation with a shared seed and schedule; rows come back
/// in the fixed order of ablation_rows().
std::vector<ReportRow> run_ablation(AblationKind kind, const Dataset& data, const TrainConfig& base,
                                    const std::function<void(const ReportRow&)>& on_row = {});

}  // namespace lgs
