// lgseg: dataset generation, training, evaluation, gradient checks and
// ablation reports for the language-guided segmentation model.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lgs/checkpoint.hpp"
#include "lgs/errors.hpp"
#include "lgs/experiment.hpp"
#include "lgs/gradcheck_suite.hpp"

namespace {

using namespace lgs;
using json = nlohmann::ordered_json;

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitVerify = 3;

struct TrainFlags {
    std::optional<std::int64_t> batch_size, epochs;
    std::optional<double> lr_max, lr_min, weight_decay, data_fraction;
    std::optional<std::string> prompt_mode;
    std::optional<int> decoders;

    void add_to(CLI::App* app) {
        app->add_option("--batch-size", batch_size, "samples per optimizer step (default 32)")->check(CLI::PositiveNumber);
        app->add_option("--epochs", epochs, "training epochs (default 40)")->check(CLI::PositiveNumber);
        app->add_option("--lr-max", lr_max, "initial learning rate (default 3e-4)");
        app->add_option("--lr-min", lr_min, "final learning rate (default 1e-6)");
        app->add_option("--weight-decay", weight_decay, "decoupled AdamW weight decay (default 0.01)");
        app->add_option("--data-fraction", data_fraction, "fraction of the training split used")
            ->check(CLI::Range(0.0, 1.0));
        app->add_option("--prompt-mode", prompt_mode, "none, s12, s3 or s123")
            ->check(CLI::IsMember({"none", "s12", "s3", "s123"}));
        app->add_option("--decoders", decoders, "number of guide decoders")->check(CLI::Range(0, 3));
    }

    void apply(TrainConfig& c) const {
        if (batch_size) c.batch_size = *batch_size;
        if (epochs) c.epochs = *epochs;
        if (lr_max) c.lr_max = *lr_max;
        if (lr_min) c.lr_min = *lr_min;
        if (weight_decay) c.adamw.weight_decay = *weight_decay;
        if (data_fraction) c.data_fraction = *data_fraction;
        if (prompt_mode) c.prompt_mode = parse_prompt_mode(*prompt_mode);
        if (decoders) c.guide_decoders = *decoders;
    }
};

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config_path;
};

std::uint64_t resolve_seed(const Globals& g) {
    if (g.seed) return *g.seed;
    if (const char* env = std::getenv("LGS_SEED"); env != nullptr && *env != '\0') {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("LGS_SEED is not an unsigned integer: ") + env);
    }
    return 0;
}

// Defaults, then the --config file, then explicit flags.
TrainConfig resolve_train_config(const Globals& g, const TrainFlags& flags) {
    TrainConfig c;
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw IoError("cannot read config " + g.config_path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config " + g.config_path + " is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw ConfigError("config " + g.config_path + " must be a JSON object");
        c = train_config_from_json(j, c);
    }
    flags.apply(c);
    if (g.seed || std::getenv("LGS_SEED") != nullptr) c.seed = resolve_seed(g);
    c.validate();
    return c;
}

void echo_config(const TrainConfig& c) { std::cerr << "config " << to_json(c).dump() << "\n"; }

int cmd_gen_data(const Globals& g, const std::string& out, std::int64_t n_train, std::int64_t n_test) {
    if (n_train < 1) throw ConfigError("--n-train must be >= 1");
    if (n_test < 0) throw ConfigError("--n-test must be >= 0");
    const auto seed = resolve_seed(g);
    const Dataset data = generate_dataset(n_train, n_test, seed);
    write_dataset(data, out);
    json counts;
    counts["train"] = data.subset(Split::Train).size();
    counts["val"] = data.subset(Split::Val).size();
    counts["test"] = data.subset(Split::Test).size();
    counts["seed"] = seed;
    std::cout << counts.dump() << std::endl;
    return 0;
}

int cmd_train(const Globals& g, const TrainFlags& flags, const std::string& data_dir, const std::string& out,
              std::string log_path, const std::string& resume) {
    const Dataset data = load_dataset(data_dir);
    if (data.records.empty()) throw InputError("dataset " + data_dir + " is empty");
    if (log_path.empty()) log_path = out + ".log.jsonl";

    std::optional<LoadedCheckpoint> resumed;
    TrainConfig config;
    if (!resume.empty()) {
        resumed.emplace(load_checkpoint(resume));
        config = resumed->config;
        flags.apply(config);  // typically only --epochs changes on resume
        config.validate();
    } else {
        config = resolve_train_config(g, flags);
    }
    echo_config(config);

    SegModel model = resumed ? std::move(resumed->model) : init_model(config, data.records.front().side);
    TrainState state = resumed ? std::move(resumed->state) : init_train_state(model, config);

    std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write log " + log_path);
    TrainHooks hooks;
    hooks.on_best = [&](const SegModel& m, const TrainState& s) { save_checkpoint(out, m, s, config); };
    hooks.on_epoch = [&](const EpochLog& e, const SegModel& m, const TrainState& s) {
        json line;
        line["epoch"] = e.epoch;
        line["loss"] = e.loss;
        line["val_dice"] = e.val_dice;
        log << line.dump() << "\n" << std::flush;
        std::cout << line.dump() << std::endl;
        save_checkpoint(out + ".last", m, s, config);
    };
    const TrainResult result = train(model, data, config, state, hooks);
    json summary;
    summary["best_epoch"] = result.best_epoch;
    summary["best_val_dice"] = result.best_val_dice;
    summary["checkpoint"] = out;
    std::cerr << "done " << summary.dump() << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split_name,
             const std::string& label) {
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Dataset data = load_dataset(data_dir);
    const auto split = data.subset(parse_split(split_name));
    if (split.empty()) throw InputError("split '" + split_name + "' of " + data_dir + " is empty");
    ReportRow row;
    row.label = label;
    row.metrics = evaluate(loaded.model, split);
    row.prompt_mode = loaded.model.config().prompt_mode;
    row.guide_decoders = loaded.model.config().effective_guides();
    row.data_fraction = loaded.config.data_fraction;
    row.seed = loaded.config.seed;
    row.best_epoch = loaded.state.best_epoch;
    std::cout << to_json(row).dump() << std::endl;
    return 0;
}

int cmd_gradcheck(const Globals& g, bool corrupt, double tol) {
    GradCheckOptions options;
    options.tol = static_cast<float>(tol);
    if (corrupt) options.analytic_scale = 1.01f;  // fixture: a 1% gradient bug must be caught
    const auto results = run_gradcheck_suite(resolve_seed(g), options);
    bool all = true;
    for (const auto& r : results) {
        json line;
        line["component"] = r.component;
        line["max_rel_error"] = r.report.max_rel_error();
        line["params"] = r.report.params.size();
        line["passed"] = r.report.passed;
        std::cout << line.dump() << "\n";
        if (!r.report.passed) {
            for (const auto& p : r.report.params) {
                if (!p.passed) std::cerr << r.component << "/" << p.name << " rel error " << p.max_rel_error << "\n";
            }
        }
        all = all && r.report.passed;
    }
    json summary;
    summary["components"] = results.size();
    summary["passed"] = all;
    std::cout << summary.dump() << std::endl;
    return all ? 0 : kExitVerify;
}

int cmd_ablate(const Globals& g, const TrainFlags& flags, const std::string& kind_name, const std::string& data_dir,
               const std::string& out) {
    const AblationKind kind = parse_ablation_kind(kind_name);
    const TrainConfig base = resolve_train_config(g, flags);
    echo_config(base);
    const Dataset data = load_dataset(data_dir);
    if (data.records.empty()) throw InputError("dataset " + data_dir + " is empty");
    std::ofstream file;
    if (!out.empty()) {
        file.open(out, std::ios::trunc);
        if (!file) throw IoError("cannot write report " + out);
    }
    run_ablation(kind, data, base, [&](const ReportRow& row) {
        const std::string line = to_json(row).dump();
        std::cout << line << std::endl;
        if (file.is_open()) file << line << "\n" << std::flush;
    });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"language-guided segmentation toolkit"};
    app.require_subcommand(1, 1);
    app.fallthrough();  // --seed and --config also work after the subcommand
    Globals globals;
    app.add_option("--seed", globals.seed, "master seed (falls back to $LGS_SEED, then 0)");
    app.add_option("--config", globals.config_path, "JSON file with training settings");

    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    std::string gen_out;
    std::int64_t n_train = 512, n_test = 128;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--n-train", n_train, "train pool size, split 80/20 into train/val");
    gen->add_option("--n-test", n_test, "test set size");

    auto* tr = app.add_subcommand("train", "train a model");
    TrainFlags train_flags;
    std::string train_data, train_out, train_log, train_resume;
    tr->add_option("--data", train_data, "dataset directory")->required();
    tr->add_option("--out", train_out, "best-validation checkpoint path")->required();
    tr->add_option("--log", train_log, "JSONL epoch log (default <out>.log.jsonl)");
    tr->add_option("--resume", train_resume, "continue from a checkpoint (e.g. <out>.last)");
    train_flags.add_to(tr);

    auto* ev = app.add_subcommand("eval", "score a checkpoint");
    std::string eval_ckpt, eval_data, eval_split = "test", eval_label = "eval";
    ev->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
    ev->add_option("--data", eval_data, "dataset directory")->required();
    ev->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--label", eval_label, "report label");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    bool corrupt = false;
    double tol = 1e-3;
    gc->add_flag("--corrupt-grad", corrupt, "scale analytic gradients by 1.01 (must fail)");
    gc->add_option("--tol", tol, "relative tolerance")->check(CLI::PositiveNumber);

    auto* ab = app.add_subcommand("ablate", "run an ablation and print JSONL rows");
    TrainFlags ablate_flags;
    std::string kind, ablate_data, ablate_out;
    ab->add_option("--kind", kind, "decoders, granularity or fraction")
        ->required()
        ->check(CLI::IsMember({"decoders", "granularity", "fraction"}));
    ab->add_option("--data", ablate_data, "dataset directory")->required();
    ab->add_option("--out", ablate_out, "also write the report here");
    ablate_flags.add_to(ab);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(globals, gen_out, n_train, n_test);
        if (tr->parsed()) return cmd_train(globals, train_flags, train_data, train_out, train_log, train_resume);
        if (ev->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_label);
        if (gc->parsed()) return cmd_gradcheck(globals, corrupt, tol);
        if (ab->parsed()) return cmd_ablate(globals, ablate_flags, kind, ablate_data, ablate_out);
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitUsage;
}
