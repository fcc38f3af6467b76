#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace mmel::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Flat run configuration shared by the subcommands. Unknown keys in a
/// config file are errors.
struct Config {
    // dataset
    std::string dataset = "blobs"; // blobs | synth-images | cifar10 | idx | text-blobs
    std::string data_path;         // cifar10 .bin file; idx image file
    std::string labels_path;       // idx label file
    int train_count = 400;
    int eval_count = 200;
    int classes = 3;
    int dim = 4;      // blobs feature count
    int vocab = 64;   // text-blobs vocabulary
    int seq_len = 12; // text-blobs sequence length
    std::string task = "classification"; // or "regression"

    // model
    std::string model = "auto"; // or a layer signature

    // training
    std::string mode = "uniform"; // baseline_da | uniform | mmel_hard | mmel_soft
    int epochs = 10;
    int batch_size = 32;
    double lr = 0.05;
    std::vector<int> lr_milestones;
    double lr_factor = 0.2;
    double momentum = 0.9;
    double weight_decay = 0.0;
    uint64_t seed = 1;
    int threads = 0; // 0: MMEL_THREADS / hardware
    bool strict = false;

    // augmentation (phase 1)
    int n_aug = 0;
    int pad = 4;
    double flip_p = 0.5;
    double mask_ratio = 0.4;

    // reweighting
    double lambda_p = 1.0;
    double lambda_t = 1.0;
    bool detach_weights = true;
    double regression_threshold = 0.5;

    // verification
    int verify_instances = 1000;
    int grad_check_seeds = 20;

    // io
    std::string teacher;     // teacher checkpoint path
    std::string groups_path; // pre-generated group file (JSONL)
    std::string out_dir = "mmel-out";
    std::string ckpt_dtype = "f64";

    int resolved_threads() const;
};

Config config_from_json(const nlohmann::json& j);
/// Overlays the keys present in j onto cfg (for preset/file/flag layering).
void apply_config_json(Config& cfg, const nlohmann::json& j);
Config load_config_file(const std::string& path);
nlohmann::json config_to_json(const Config& cfg);

/// blobs-smoke (seconds), cifar-desk (minutes), verify (Theorem-1 suite).
void apply_preset(Config& cfg, const std::string& name);

/// FNV-1a digest of a file's bytes, hex-encoded.
std::string file_digest(const std::string& path);

/// Run manifest: resolved config, toolkit version, seed, input digests,
/// output paths (with digests, recomputed and compared on read).
nlohmann::json make_manifest(const std::string& command, const Config& cfg);
void add_manifest_input(nlohmann::json& manifest, const std::string& path);
void add_manifest_output(nlohmann::json& manifest, const std::string& path);
void write_manifest(const std::string& path, const nlohmann::json& manifest);
nlohmann::json load_manifest(const std::string& path);

/// Re-reads the files listed in the manifest and checks their digests.
void verify_manifest_digests(const nlohmann::json& manifest);

} // namespace mmel::cli
