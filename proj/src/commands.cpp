#include "mmel/commands.hpp"

#include "mmel/checkpoint.hpp"
#include "mmel/datasets.hpp"
#include "mmel/oracle.hpp"
#include "mmel/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace mmel::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t derive_seed(uint64_t seed, uint64_t tag) {
    return RngStream::keyed({seed, tag}).next_u64();
}

engine::Dataset take(engine::Dataset ds, size_t offset, size_t count, const char* what) {
    if (ds.samples.size() < offset + count) {
        throw std::runtime_error(std::string(what) + ": dataset holds " +
                                 std::to_string(ds.samples.size()) + " samples, need " +
                                 std::to_string(offset + count));
    }
    engine::Dataset out;
    out.num_classes = ds.num_classes;
    out.task = ds.task;
    out.samples.assign(std::make_move_iterator(ds.samples.begin() + static_cast<std::ptrdiff_t>(offset)),
                       std::make_move_iterator(ds.samples.begin() +
                                               static_cast<std::ptrdiff_t>(offset + count)));
    return out;
}

engine::Dataset load_cifar_for(const Config& cfg, bool eval_split) {
    if (cfg.data_path.empty()) {
        throw std::runtime_error("cifar10 dataset needs data_path");
    }
    if (fs::is_directory(cfg.data_path)) {
        if (eval_split) {
            return take(load_cifar_binary((fs::path(cfg.data_path) / "test_batch.bin").string()),
                        0, static_cast<size_t>(cfg.eval_count), "cifar eval");
        }
        engine::Dataset all;
        all.num_classes = 10;
        for (int b = 1; b <= 5 && static_cast<int>(all.samples.size()) < cfg.train_count; ++b) {
            auto part = load_cifar_binary(
                (fs::path(cfg.data_path) / ("data_batch_" + std::to_string(b) + ".bin")).string());
            for (auto& s : part.samples) all.samples.push_back(std::move(s));
        }
        return take(std::move(all), 0, static_cast<size_t>(cfg.train_count), "cifar train");
    }
    auto all = load_cifar_binary(cfg.data_path);
    return eval_split ? take(std::move(all), static_cast<size_t>(cfg.train_count),
                             static_cast<size_t>(cfg.eval_count), "cifar eval")
                      : take(std::move(all), 0, static_cast<size_t>(cfg.train_count),
                             "cifar train");
}

void to_regression_targets(engine::Dataset& ds) {
    // Desk-scale regression stand-in: the target is the mean feature value.
    ds.task = teacher::TaskKind::Regression;
    for (auto& s : ds.samples) {
        const auto& img = std::get<augment::ImagePayload>(s.payload);
        double mean = 0.0;
        for (float v : img.data) mean += v;
        s.label = mean / static_cast<double>(img.data.size());
    }
}

engine::Dataset build_dataset(const Config& cfg, bool eval_split) {
    const auto count = static_cast<size_t>(eval_split ? cfg.eval_count : cfg.train_count);
    const uint64_t dseed = derive_seed(cfg.seed, eval_split ? 0x6576616cULL : 0x747261696eULL);
    engine::Dataset ds;
    if (cfg.dataset == "blobs") {
        ds = make_blobs(static_cast<int>(count), cfg.classes, cfg.dim, dseed);
    } else if (cfg.dataset == "synth-images") {
        ds = make_synth_images(static_cast<int>(count), cfg.classes, dseed);
    } else if (cfg.dataset == "cifar10") {
        ds = load_cifar_for(cfg, eval_split);
    } else if (cfg.dataset == "idx") {
        if (cfg.data_path.empty() || cfg.labels_path.empty()) {
            throw std::runtime_error("idx dataset needs data_path and labels_path");
        }
        auto all = load_idx_dataset(cfg.data_path, cfg.labels_path);
        ds = eval_split ? take(std::move(all), static_cast<size_t>(cfg.train_count), count,
                               "idx eval")
                        : take(std::move(all), 0, count, "idx train");
    } else if (cfg.dataset == "text-blobs") {
        ds = make_text_blobs(static_cast<int>(count), cfg.classes, cfg.vocab, cfg.seq_len, dseed);
    } else {
        throw std::runtime_error("unknown dataset '" + cfg.dataset +
                                 "' (expected blobs, synth-images, cifar10, idx or text-blobs)");
    }
    if (cfg.task == "regression") {
        if (cfg.dataset != "blobs") {
            throw std::runtime_error("regression runs are supported on the blobs dataset");
        }
        to_regression_targets(ds);
    }
    return ds;
}

diff::Shape input_shape_for(const Config& cfg) {
    if (cfg.dataset == "blobs") return {1, 1, cfg.dim};
    if (cfg.dataset == "text-blobs") return {cfg.vocab};
    if (cfg.dataset == "idx") return {1, 28, 28};
    return {3, 32, 32}; // synth-images, cifar10
}

} // namespace

bool dataset_is_text(const Config& cfg) { return cfg.dataset == "text-blobs"; }

engine::Dataset build_train_dataset(const Config& cfg) { return build_dataset(cfg, false); }
engine::Dataset build_eval_dataset(const Config& cfg) { return build_dataset(cfg, true); }

diff::Model build_model(const Config& cfg) {
    const diff::Shape in = input_shape_for(cfg);
    const bool regression = cfg.task == "regression";
    const int head = regression ? 1 : cfg.classes;
    std::string sig = cfg.model;
    if (sig == "auto") {
        const std::string softmax = regression ? "" : "|logsoftmax";
        if (cfg.dataset == "blobs") {
            sig = "flatten|dense(" + std::to_string(cfg.dim) + ",32)|relu|dense(32," +
                  std::to_string(head) + ")" + softmax;
        } else if (cfg.dataset == "text-blobs") {
            sig = "dense(" + std::to_string(cfg.vocab) + ",32)|relu|dense(32," +
                  std::to_string(head) + ")" + softmax;
        } else if (cfg.dataset == "idx") {
            sig = "conv2d(1,6)|relu|maxpool2|flatten|dense(1176," + std::to_string(head) + ")" +
                  softmax;
        } else {
            sig = "maxpool2|conv2d(3,6)|relu|maxpool2|conv2d(6,12)|relu|maxpool2|flatten|"
                  "dense(192," +
                  std::to_string(head) + ")" + softmax;
        }
    }
    diff::Model model = diff::Model::from_signature(in, sig);
    model.init_params(derive_seed(cfg.seed, 0x6d6f64656cULL));
    return model;
}

std::vector<augment::AugmentedGroup> build_groups(const Config& cfg,
                                                  const engine::Dataset& train) {
    if (!cfg.groups_path.empty()) {
        auto groups = augment::load_offline_groups(cfg.groups_path);
        return groups;
    }
    std::vector<augment::AugmentedGroup> groups;
    groups.reserve(train.samples.size());
    if (dataset_is_text(cfg)) {
        std::vector<std::vector<int>> corpus;
        corpus.reserve(train.samples.size());
        for (const auto& s : train.samples) {
            corpus.push_back(std::get<augment::TextPayload>(s.payload).tokens);
        }
        augment::UnigramPredictor predictor(corpus, cfg.vocab);
        for (const auto& s : train.samples) {
            groups.push_back(
                augment::build_text_group(s, cfg.n_aug, cfg.mask_ratio, predictor, cfg.seed));
        }
    } else {
        augment::ImageAugmentOptions opt;
        opt.pad = cfg.pad;
        opt.flip_p = cfg.flip_p;
        for (const auto& s : train.samples) {
            groups.push_back(augment::build_image_group(s, cfg.n_aug, opt, cfg.seed));
        }
    }
    return groups;
}

engine::TrainConfig to_train_config(const Config& cfg) {
    engine::TrainConfig tc;
    tc.mode = engine::mode_from_name(cfg.mode);
    tc.batch_size = cfg.batch_size;
    tc.epochs = cfg.epochs;
    tc.schedule = {cfg.lr, cfg.lr_milestones, cfg.lr_factor};
    tc.momentum = cfg.momentum;
    tc.weight_decay = cfg.weight_decay;
    tc.seed = cfg.seed;
    tc.mmel.lambda_p = cfg.lambda_p;
    tc.mmel.lambda_t = cfg.lambda_t;
    tc.mmel.mode = tc.mode == engine::Mode::MmelSoft ? reweight::LossMode::Soft
                                                     : reweight::LossMode::Hard;
    tc.mmel.detach_weights = cfg.detach_weights;
    tc.mmel.regression_threshold = cfg.regression_threshold;
    tc.n_aug = cfg.n_aug;
    tc.task = cfg.task == "regression" ? teacher::TaskKind::Regression
                                       : teacher::TaskKind::Classification;
    tc.threads = cfg.resolved_threads();
    tc.strict = cfg.strict;
    return tc;
}

diff::Model model_from_manifest(const std::string& checkpoint_path) {
    const fs::path manifest_path = fs::path(checkpoint_path).parent_path() / "manifest.json";
    const json manifest = load_manifest(manifest_path.string());
    const auto sig = manifest.at("model").at("signature").get<std::string>();
    const auto in = manifest.at("model").at("input_shape").get<std::vector<int>>();
    return diff::Model::from_signature(diff::Shape(in.begin(), in.end()), sig);
}

namespace {

void echo_config(const char* command, const Config& cfg) {
    std::printf("%s: resolved config\n%s\n", command, config_to_json(cfg).dump(2).c_str());
}

void add_dataset_inputs(json& manifest, const Config& cfg) {
    if (!cfg.data_path.empty() && fs::is_regular_file(cfg.data_path)) {
        add_manifest_input(manifest, cfg.data_path);
    }
    if (!cfg.labels_path.empty() && fs::is_regular_file(cfg.labels_path)) {
        add_manifest_input(manifest, cfg.labels_path);
    }
    if (!cfg.groups_path.empty()) add_manifest_input(manifest, cfg.groups_path);
    if (!cfg.teacher.empty()) add_manifest_input(manifest, cfg.teacher);
}

} // namespace

int cmd_gen_augment(const Config& cfg, bool dry_run) {
    if (cfg.n_aug < 0) throw std::runtime_error("n_aug must be nonnegative");
    if (dry_run) {
        echo_config("gen-augment", cfg);
        return kExitOk;
    }
    engine::Dataset train = build_train_dataset(cfg);
    auto groups = build_groups(cfg, train);

    fs::create_directories(cfg.out_dir);
    const std::string groups_path = (fs::path(cfg.out_dir) / "groups.jsonl").string();
    augment::save_offline_groups(groups_path, groups);

    json manifest = make_manifest("gen-augment", cfg);
    add_dataset_inputs(manifest, cfg);
    add_manifest_output(manifest, groups_path);
    write_manifest((fs::path(cfg.out_dir) / "manifest.json").string(), manifest);
    std::printf("gen-augment: wrote %zu groups (%d members each) to %s\n", groups.size(),
                cfg.n_aug + 1, groups_path.c_str());
    return kExitOk;
}

int cmd_train(const Config& cfg, bool dry_run) {
    engine::TrainConfig tc = to_train_config(cfg);
    tc.validate();
    const bool text = dataset_is_text(cfg);
    if (tc.mode == engine::Mode::MmelSoft && text && cfg.teacher.empty()) {
        throw std::runtime_error("mmel_soft on a token task needs a teacher "
                                 "(--teacher <checkpoint>): original labels cannot stand in for "
                                 "drifted members");
    }
    if (dry_run) {
        echo_config("train", cfg);
        return kExitOk;
    }

    engine::Dataset train = build_train_dataset(cfg);
    engine::Dataset eval = build_eval_dataset(cfg);
    diff::Model model = build_model(cfg);
    auto groups = build_groups(cfg, train);

    std::unique_ptr<teacher::TeacherHandle> teach;
    if (!cfg.teacher.empty()) {
        teach = std::make_unique<teacher::TeacherHandle>(teacher::TeacherHandle::load(
            model_from_manifest(cfg.teacher), cfg.teacher, tc.task));
        engine::prepare_groups(groups, teach.get());
    }

    fs::create_directories(cfg.out_dir);
    tc.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.mmel").string();
    engine::TrainResult result = engine::train(model, tc, train, groups, eval);

    const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
    engine::write_metrics_csv(metrics_path, result.metrics);

    json manifest = make_manifest("train", cfg);
    add_dataset_inputs(manifest, cfg);
    manifest["model"] = {{"signature", model.signature()},
                         {"input_shape", model.input_shape()},
                         {"task", cfg.task},
                         {"classes", cfg.classes}};
    if (!result.norm.identity()) {
        manifest["normalization"] = {{"mean", result.norm.mean}, {"stddev", result.norm.stddev}};
    }
    const auto& last = result.metrics.back();
    manifest["result"] = {{"final_train_acc", last.train_acc},
                          {"final_eval_acc", last.eval_acc},
                          {"final_weighted_loss", last.weighted_loss}};
    add_manifest_output(manifest, tc.checkpoint_path);
    add_manifest_output(manifest, metrics_path);
    write_manifest((fs::path(cfg.out_dir) / "manifest.json").string(), manifest);

    std::printf("train: %s %d epochs, final train_acc=%.4f eval=%.4f -> %s\n", cfg.mode.c_str(),
                cfg.epochs, last.train_acc, last.eval_acc, tc.checkpoint_path.c_str());
    return kExitOk;
}

int cmd_eval(const Config& cfg, const std::string& checkpoint_path, bool dry_run) {
    if (dry_run) {
        echo_config("eval", cfg);
        return kExitOk;
    }
    diff::Model model = model_from_manifest(checkpoint_path);
    auto extras = diff::load_params(model, checkpoint_path);
    features::Normalization norm;
    if (extras.size() >= 2) {
        norm.mean = extras[extras.size() - 2].values;
        norm.stddev = extras[extras.size() - 1].values;
    }
    engine::Dataset eval = build_eval_dataset(cfg);
    const double metric = engine::evaluate(model, eval, norm, cfg.resolved_threads());
    const char* name = eval.task == teacher::TaskKind::Regression ? "eval_mse" : "eval_accuracy";
    std::printf("%s=%.6f\n", name, metric);

    fs::create_directories(cfg.out_dir);
    json out = {{"metric", name}, {"value", metric}, {"checkpoint", checkpoint_path}};
    const std::string eval_path = (fs::path(cfg.out_dir) / "eval.json").string();
    std::ofstream os(eval_path, std::ios::trunc);
    os << out.dump(2) << "\n";

    json manifest = make_manifest("eval", cfg);
    add_manifest_input(manifest, checkpoint_path);
    add_manifest_output(manifest, eval_path);
    write_manifest((fs::path(cfg.out_dir) / "manifest.json").string(), manifest);
    return kExitOk;
}

int cmd_verify(const Config& cfg, bool dry_run) {
    if (dry_run) {
        echo_config("verify-theorem", cfg);
        return kExitOk;
    }
    const auto reports = oracle::verify_theorem1(cfg.verify_instances, cfg.seed);

    fs::create_directories(cfg.out_dir);
    const std::string reports_path = (fs::path(cfg.out_dir) / "reports.jsonl").string();
    {
        std::ofstream os(reports_path, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open '" + reports_path + "'");
        for (const auto& r : reports) {
            json line = {{"losses", r.losses},       {"lambda_p", r.lambda_p},
                         {"oracle_w", r.oracle_w.w}, {"closed_w", r.closed_w.w},
                         {"linf_gap", r.linf_gap},   {"value_gap", r.value_gap},
                         {"iterations", r.iterations}, {"converged", r.converged}};
            os << line.dump() << "\n";
        }
    }

    double max_linf = 0.0, max_value = 0.0;
    for (const auto& r : reports) {
        max_linf = std::max(max_linf, r.linf_gap);
        max_value = std::max(max_value, r.value_gap);
    }
    const bool pass = max_linf < 1e-5 && max_value < 1e-9;
    std::printf("verify-theorem: instances=%zu max_linf_gap=%.3e max_value_gap=%.3e "
                "thresholds=(1e-5, 1e-9) result=%s\n",
                reports.size(), max_linf, max_value, pass ? "PASS" : "FAIL");

    json manifest = make_manifest("verify-theorem", cfg);
    manifest["result"] = {{"max_linf_gap", max_linf},
                          {"max_value_gap", max_value},
                          {"pass", pass}};
    add_manifest_output(manifest, reports_path);
    write_manifest((fs::path(cfg.out_dir) / "manifest.json").string(), manifest);
    return pass ? kExitOk : kExitVerifyFail;
}

int cmd_grad_check(const Config& cfg, bool dry_run) {
    if (dry_run) {
        echo_config("grad-check", cfg);
        return kExitOk;
    }
    const auto report = oracle::check_group_gradients(cfg.grad_check_seeds);
    const bool pass = report.hard_gap < 1e-6 && report.soft_gap < 1e-6;
    std::printf("grad-check: seeds=%d hard_gap=%.3e soft_gap=%.3e threshold=1e-6 result=%s\n",
                report.seeds, report.hard_gap, report.soft_gap, pass ? "PASS" : "FAIL");

    fs::create_directories(cfg.out_dir);
    json manifest = make_manifest("grad-check", cfg);
    manifest["result"] = {{"hard_gap", report.hard_gap},
                          {"soft_gap", report.soft_gap},
                          {"pass", pass}};
    write_manifest((fs::path(cfg.out_dir) / "manifest.json").string(), manifest);
    return pass ? kExitOk : kExitVerifyFail;
}

} // namespace mmel::cli
