#pragma once

#include "mmel/augment.hpp"
#include "mmel/features.hpp"
#include "mmel/model.hpp"
#include "mmel/optim.hpp"
#include "mmel/reweight.hpp"
#include "mmel/teacher.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mmel::engine {

using teacher::TaskKind;

enum class Mode { BaselineDa, Uniform, MmelHard, MmelSoft };

std::string mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

struct Dataset {
    std::vector<augment::Sample> samples;
    int num_classes = 0;
    TaskKind task = TaskKind::Classification;
};

struct TrainConfig {
    Mode mode = Mode::Uniform;
    int batch_size = 128;
    int epochs = 1;
    diff::LrSchedule schedule;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    uint64_t seed = 0;
    reweight::MmelConfig mmel;
    int n_aug = 0; // |B(x_i)| - 1, used for validation against the groups
    TaskKind task = TaskKind::Classification;
    int threads = 1;
    bool strict = false;          // deterministic outputs (zeroed wall time)
    std::string checkpoint_path;  // empty: keep the model in memory only

    void validate() const;
};

struct MetricsRecord {
    int epoch = 0;
    double weighted_loss = 0.0; // mean differentiable group loss
    double plain_loss = 0.0;    // uniform-weight counterpart
    double entropy_term = 0.0;  // mean -lambda_p * KL block (scaled by lambda_t in soft mode)
    double max_weight = 0.0;    // mean of per-group max weight
    double train_acc = 0.0;
    double eval_acc = 0.0; // accuracy, or MSE for regression tasks
    double lr = 0.0;
    double seconds = 0.0;
};

struct GroupStepOptions {
    Mode mode = Mode::Uniform;
    reweight::MmelConfig mmel;
    TaskKind task = TaskKind::Classification;
    size_t baseline_pick = 0; // member drawn for baseline_da
};

struct GroupStepResult {
    diff::Tensor loss; // differentiable scalar used for backward
    reweight::WeightVector weights;
    double plain_loss = 0.0;
    double entropy_term = 0.0;
    double value_with_entropy = 0.0;
    bool original_correct = false;
};

/// One group's objective under the configured mode.
///   baseline_da: loss of the uniformly drawn member.
///   uniform:     mean member loss, uniform weights.
///   mmel_hard:   per-member losses, softmax weights, loss = sum w * l;
///                the entropy block is reported, not differentiated
///                (detach_weights=true), or flows through the tape
///                otherwise.
///   mmel_soft:   original loss + lambda_t * reweighted divergence of the
///                augmented members from the original's (detached) output;
///                cached teacher targets replace drifted members.
GroupStepResult group_step(const diff::Model& model, const augment::AugmentedGroup& group,
                           const GroupStepOptions& opt, const features::Normalization& norm);

/// Applies the teacher relabeling pass where the mode requires it
/// (token tasks trained against teacher outputs; soft-mode agreement
/// caching). A no-op without a teacher.
void prepare_groups(std::vector<augment::AugmentedGroup>& groups,
                    const teacher::TeacherHandle* teacher);

struct TrainResult {
    std::vector<MetricsRecord> metrics;
    features::Normalization norm;
};

/// Two-phase training, phase 2: the groups were generated beforehand and
/// stay fixed across epochs. Epoch e runs ceil(N / S) mini-batches of S
/// groups at lr_at_epoch(schedule, e); gradients of the per-group losses
/// are averaged over the batch. Group gradient contributions reduce in
/// batch order, so results do not depend on the worker count.
TrainResult train(diff::Model& model, const TrainConfig& cfg, const Dataset& train_data,
                  const std::vector<augment::AugmentedGroup>& groups, const Dataset& eval_data);

/// Augmentation-free, gradient-free evaluation: classification accuracy
/// or regression MSE.
double evaluate(const diff::Model& model, const Dataset& data,
                const features::Normalization& norm, int threads = 1);

/// Header: epoch,weighted_loss,plain_loss,entropy_term,max_weight,
/// train_acc,eval_acc,lr,seconds
void write_metrics_csv(const std::string& path, std::span<const MetricsRecord> records);

} // namespace mmel::engine
