#pragma once

#include "mmel/augment.hpp"
#include "mmel/config.hpp"
#include "mmel/engine.hpp"

#include <memory>
#include <string>
#include <vector>

namespace mmel::cli {

// Exit codes: 0 success, 1 usage, 2 runtime failure, 3 verification failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitVerifyFail = 3;

bool dataset_is_text(const Config& cfg);

engine::Dataset build_train_dataset(const Config& cfg);
engine::Dataset build_eval_dataset(const Config& cfg);

/// Model for the configured dataset/task; "auto" picks a small default
/// per dataset family.
diff::Model build_model(const Config& cfg);

/// Phase 1: per-sample augmentation groups, loaded from groups_path when
/// set, generated deterministically from the run seed otherwise.
std::vector<augment::AugmentedGroup> build_groups(const Config& cfg,
                                                  const engine::Dataset& train);

engine::TrainConfig to_train_config(const Config& cfg);

/// Rebuilds a model from the manifest written next to a checkpoint.
diff::Model model_from_manifest(const std::string& checkpoint_path);

int cmd_gen_augment(const Config& cfg, bool dry_run);
int cmd_train(const Config& cfg, bool dry_run);
int cmd_eval(const Config& cfg, const std::string& checkpoint_path, bool dry_run);
int cmd_verify(const Config& cfg, bool dry_run);
int cmd_grad_check(const Config& cfg, bool dry_run);

} // namespace mmel::cli
