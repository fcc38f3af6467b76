#include <CLI11.hpp>

#include "mmel/commands.hpp"
#include "mmel/config.hpp"

#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

namespace {

using mmel::cli::Config;

// Common per-subcommand options layered as: defaults < preset < config
// file < explicit flags.
struct CommonArgs {
    std::string preset;
    std::string config_path;
    bool dry_run = false;
    nlohmann::json overrides = nlohmann::json::object();

    Config resolve() const {
        Config cfg;
        if (!preset.empty()) mmel::cli::apply_preset(cfg, preset);
        if (!config_path.empty()) {
            std::ifstream is(config_path);
            nlohmann::json j;
            is >> j;
            mmel::cli::apply_config_json(cfg, j);
        }
        mmel::cli::apply_config_json(cfg, overrides);
        return cfg;
    }
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--preset", args.preset, "Named preset: blobs-smoke, cifar-desk, verify");
    sub->add_option("--config", args.config_path, "JSON config file")
        ->check(CLI::ExistingFile);
    sub->add_flag("--dry-run", args.dry_run, "Validate the configuration and exit");

    auto opt = [&args, sub](const char* flag, const char* key, const char* help) {
        sub->add_option_function<std::string>(
            flag, [&args, key](const std::string& v) { args.overrides[key] = v; }, help);
    };
    auto opt_int = [&args, sub](const char* flag, const char* key, const char* help) {
        sub->add_option_function<int>(
            flag, [&args, key](int v) { args.overrides[key] = v; }, help);
    };
    auto opt_real = [&args, sub](const char* flag, const char* key, const char* help) {
        sub->add_option_function<double>(
            flag, [&args, key](double v) { args.overrides[key] = v; }, help);
    };

    opt("--dataset", "dataset", "blobs | synth-images | cifar10 | idx | text-blobs");
    opt("--data", "data_path", "Dataset path (cifar10 .bin file or directory; idx images)");
    opt("--labels", "labels_path", "IDX label file");
    opt("--mode", "mode", "baseline_da | uniform | mmel_hard | mmel_soft");
    opt("--model", "model", "Layer signature, or 'auto'");
    opt("--teacher", "teacher", "Teacher checkpoint path");
    opt("--groups", "groups_path", "Pre-generated group file (JSONL)");
    opt("--out", "out_dir", "Output directory");
    opt("--task", "task", "classification | regression");
    opt_int("--train-count", "train_count", "Training samples");
    opt_int("--eval-count", "eval_count", "Evaluation samples");
    opt_int("--classes", "classes", "Class count");
    opt_int("--epochs", "epochs", "Training epochs");
    opt_int("--batch-size", "batch_size", "Groups per mini-batch");
    opt_int("--n-aug", "n_aug", "Augmented members per sample (|B|-1)");
    opt_int("--threads", "threads", "Worker threads (0: MMEL_THREADS or hardware)");
    opt_int("--instances", "verify_instances", "Instances for verify-theorem");
    opt_int("--grad-seeds", "grad_check_seeds", "Seeds for grad-check");
    opt_real("--lr", "lr", "Base learning rate");
    opt_real("--lambda-p", "lambda_p", "KL regularization strength");
    opt_real("--lambda-t", "lambda_t", "Soft-loss divergence coefficient");
    opt_real("--mask-ratio", "mask_ratio", "Masked-token fraction for text augmentation");
    sub->add_option_function<uint64_t>(
        "--seed", [&args](uint64_t v) { args.overrides["seed"] = v; }, "Run seed");
    sub->add_flag_function(
        "--strict-determinism",
        [&args](int64_t) { args.overrides["strict"] = true; },
        "Byte-stable outputs: fixed reduction order, zeroed wall-time column");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MMEL training harness: reweighted augmented-sample objectives with a "
                 "closed-form inner maximizer"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, verify_args, grad_args;
    std::string eval_checkpoint;

    auto* gen = app.add_subcommand("gen-augment", "Generate augmentation groups (phase 1)");
    add_common(gen, gen_args);
    auto* train = app.add_subcommand("train", "Train with the configured objective (phase 2)");
    add_common(train, train_args);
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(eval, eval_args);
    eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint path")->required();
    auto* verify = app.add_subcommand("verify-theorem",
                                      "Compare closed-form weights against the simplex ascent");
    add_common(verify, verify_args);
    auto* grad = app.add_subcommand("grad-check",
                                    "Compare tape gradients against finite differences");
    add_common(grad, grad_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? mmel::cli::kExitOk : mmel::cli::kExitUsage;
    }

    try {
        if (gen->parsed()) return mmel::cli::cmd_gen_augment(gen_args.resolve(), gen_args.dry_run);
        if (train->parsed()) return mmel::cli::cmd_train(train_args.resolve(), train_args.dry_run);
        if (eval->parsed()) {
            return mmel::cli::cmd_eval(eval_args.resolve(), eval_checkpoint, eval_args.dry_run);
        }
        if (verify->parsed()) {
            Config cfg = verify_args.resolve();
            return mmel::cli::cmd_verify(cfg, verify_args.dry_run);
        }
        if (grad->parsed()) {
            return mmel::cli::cmd_grad_check(grad_args.resolve(), grad_args.dry_run);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return mmel::cli::kExitRuntime;
    }
    return mmel::cli::kExitUsage;
}
