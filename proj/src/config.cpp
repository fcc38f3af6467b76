#include "mmel/config.hpp"

#include "mmel/parallel.hpp"
#include "mmel/rng.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mmel::cli {

using nlohmann::json;

int Config::resolved_threads() const {
    return threads > 0 ? threads : worker_count_from_env();
}

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

const std::vector<std::string>& valid_keys() {
    static const std::vector<std::string> keys = {
        "dataset",      "data_path",     "labels_path",   "train_count",
        "eval_count",   "classes",       "dim",           "vocab",
        "seq_len",      "task",          "model",         "mode",
        "epochs",       "batch_size",    "lr",            "lr_milestones",
        "lr_factor",    "momentum",      "weight_decay",  "seed",
        "threads",      "strict",        "n_aug",         "pad",
        "flip_p",       "mask_ratio",    "lambda_p",      "lambda_t",
        "detach_weights", "regression_threshold", "verify_instances",
        "grad_check_seeds", "teacher",   "groups_path",   "out_dir",
        "ckpt_dtype"};
    return keys;
}

} // namespace

Config config_from_json(const json& j) {
    Config cfg;
    apply_config_json(cfg, j);
    return cfg;
}

void apply_config_json(Config& cfg, const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool known = false;
        for (const auto& k : valid_keys()) known = known || k == key;
        if (!known) {
            std::string msg = "config: unknown key '" + key + "'; valid keys:";
            for (const auto& k : valid_keys()) msg += " " + k;
            throw std::invalid_argument(msg);
        }
    }
    read_key(j, "dataset", cfg.dataset);
    read_key(j, "data_path", cfg.data_path);
    read_key(j, "labels_path", cfg.labels_path);
    read_key(j, "train_count", cfg.train_count);
    read_key(j, "eval_count", cfg.eval_count);
    read_key(j, "classes", cfg.classes);
    read_key(j, "dim", cfg.dim);
    read_key(j, "vocab", cfg.vocab);
    read_key(j, "seq_len", cfg.seq_len);
    read_key(j, "task", cfg.task);
    read_key(j, "model", cfg.model);
    read_key(j, "mode", cfg.mode);
    read_key(j, "epochs", cfg.epochs);
    read_key(j, "batch_size", cfg.batch_size);
    read_key(j, "lr", cfg.lr);
    read_key(j, "lr_milestones", cfg.lr_milestones);
    read_key(j, "lr_factor", cfg.lr_factor);
    read_key(j, "momentum", cfg.momentum);
    read_key(j, "weight_decay", cfg.weight_decay);
    read_key(j, "seed", cfg.seed);
    read_key(j, "threads", cfg.threads);
    read_key(j, "strict", cfg.strict);
    read_key(j, "n_aug", cfg.n_aug);
    read_key(j, "pad", cfg.pad);
    read_key(j, "flip_p", cfg.flip_p);
    read_key(j, "mask_ratio", cfg.mask_ratio);
    read_key(j, "lambda_p", cfg.lambda_p);
    read_key(j, "lambda_t", cfg.lambda_t);
    read_key(j, "detach_weights", cfg.detach_weights);
    read_key(j, "regression_threshold", cfg.regression_threshold);
    read_key(j, "verify_instances", cfg.verify_instances);
    read_key(j, "grad_check_seeds", cfg.grad_check_seeds);
    read_key(j, "teacher", cfg.teacher);
    read_key(j, "groups_path", cfg.groups_path);
    read_key(j, "out_dir", cfg.out_dir);
    read_key(j, "ckpt_dtype", cfg.ckpt_dtype);
}

Config load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config '" + path + "'");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

json config_to_json(const Config& cfg) {
    json j;
    j["dataset"] = cfg.dataset;
    j["data_path"] = cfg.data_path;
    j["labels_path"] = cfg.labels_path;
    j["train_count"] = cfg.train_count;
    j["eval_count"] = cfg.eval_count;
    j["classes"] = cfg.classes;
    j["dim"] = cfg.dim;
    j["vocab"] = cfg.vocab;
    j["seq_len"] = cfg.seq_len;
    j["task"] = cfg.task;
    j["model"] = cfg.model;
    j["mode"] = cfg.mode;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["lr_milestones"] = cfg.lr_milestones;
    j["lr_factor"] = cfg.lr_factor;
    j["momentum"] = cfg.momentum;
    j["weight_decay"] = cfg.weight_decay;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["strict"] = cfg.strict;
    j["n_aug"] = cfg.n_aug;
    j["pad"] = cfg.pad;
    j["flip_p"] = cfg.flip_p;
    j["mask_ratio"] = cfg.mask_ratio;
    j["lambda_p"] = cfg.lambda_p;
    j["lambda_t"] = cfg.lambda_t;
    j["detach_weights"] = cfg.detach_weights;
    j["regression_threshold"] = cfg.regression_threshold;
    j["verify_instances"] = cfg.verify_instances;
    j["grad_check_seeds"] = cfg.grad_check_seeds;
    j["teacher"] = cfg.teacher;
    j["groups_path"] = cfg.groups_path;
    j["out_dir"] = cfg.out_dir;
    j["ckpt_dtype"] = cfg.ckpt_dtype;
    return j;
}

void apply_preset(Config& cfg, const std::string& name) {
    if (name == "blobs-smoke") {
        cfg.dataset = "blobs";
        cfg.train_count = 400;
        cfg.eval_count = 200;
        cfg.classes = 3;
        cfg.dim = 4;
        cfg.mode = "uniform";
        cfg.epochs = 15;
        cfg.batch_size = 32;
        cfg.lr = 0.1;
        cfg.lr_milestones = {10};
        cfg.lr_factor = 0.2;
        cfg.momentum = 0.9;
        cfg.weight_decay = 0.0;
        cfg.n_aug = 0;
        cfg.pad = 0;
        cfg.flip_p = 0.0;
    } else if (name == "cifar-desk") {
        // 5000 train / 1000 eval, small CNN, 30 epochs, |B| = 5.
        cfg.dataset = cfg.data_path.empty() ? "synth-images" : "cifar10";
        cfg.train_count = 5000;
        cfg.eval_count = 1000;
        cfg.classes = 10;
        cfg.mode = "mmel_hard";
        cfg.epochs = 30;
        cfg.batch_size = 128;
        cfg.lr = 0.1;
        cfg.lr_milestones = {9, 18, 24}; // 60/120/160 of 200 epochs, rescaled
        cfg.lr_factor = 0.2;
        cfg.momentum = 0.9;
        cfg.weight_decay = 5e-4;
        cfg.n_aug = 4;
        cfg.pad = 4;
        cfg.flip_p = 0.5;
        cfg.lambda_p = 1.0;
        cfg.lambda_t = 1.0;
    } else if (name == "verify") {
        cfg.verify_instances = 1000;
        cfg.seed = 7;
    } else {
        throw std::invalid_argument("unknown preset '" + name +
                                    "' (expected blobs-smoke, cifar-desk or verify)");
    }
}

std::string file_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "' for digest");
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

json make_manifest(const std::string& command, const Config& cfg) {
    json m;
    m["command"] = command;
    m["toolkit_version"] = kToolkitVersion;
    m["seed"] = cfg.seed;
    m["config"] = config_to_json(cfg);
    m["inputs"] = json::object();
    m["outputs"] = json::object();
    return m;
}

void add_manifest_input(json& manifest, const std::string& path) {
    manifest["inputs"][path] = file_digest(path);
}

void add_manifest_output(json& manifest, const std::string& path) {
    manifest["outputs"][path] = file_digest(path);
}

void write_manifest(const std::string& path, const json& manifest) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << manifest.dump(2) << "\n";
}

json load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest '" + path + "'");
    json m;
    try {
        is >> m;
    } catch (const json::exception& e) {
        throw std::runtime_error("manifest '" + path + "': " + e.what());
    }
    return m;
}

void verify_manifest_digests(const json& manifest) {
    for (const char* section : {"inputs", "outputs"}) {
        if (!manifest.contains(section)) continue;
        for (const auto& [path, digest] : manifest.at(section).items()) {
            if (file_digest(path) != digest.get<std::string>()) {
                throw std::runtime_error("manifest digest mismatch for '" + path + "'");
            }
        }
    }
}

} // namespace mmel::cli
