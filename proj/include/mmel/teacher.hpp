#pragma once

#include "mmel/augment.hpp"
#include "mmel/features.hpp"
#include "mmel/model.hpp"

#include <string>
#include <vector>

namespace mmel::teacher {

enum class TaskKind { Classification, Regression };

/// A trained model used to supply labels/targets for augmented samples
/// whose semantics may have drifted. Read-only after load; predictions
/// may run concurrently.
class TeacherHandle {
public:
    /// model must match the checkpoint architecture; its parameters are
    /// replaced by the checkpoint contents. Trailing normalization
    /// records in the checkpoint are picked up automatically.
    static TeacherHandle load(diff::Model model, const std::string& checkpoint_path,
                              TaskKind task);

    /// Classification: probability vector over the classes.
    std::vector<double> predict_probs(const augment::Payload& payload) const;

    /// Regression: scalar prediction.
    double predict_value(const augment::Payload& payload) const;

    TaskKind task() const { return task_; }
    const std::string& checkpoint_path() const { return path_; }
    const diff::Model& model() const { return model_; }

private:
    diff::Model model_;
    features::Normalization norm_;
    TaskKind task_ = TaskKind::Classification;
    std::string path_;
};

/// Replaces augmented members' targets with the teacher's output
/// probabilities; the original keeps its ground-truth label. The
/// teacher's prediction for the original is cached on the group for the
/// soft-mode agreement rule.
augment::AugmentedGroup relabel_hard(augment::AugmentedGroup group, const TeacherHandle& teacher);

/// Soft-mode classification target for one member: the student's own
/// output on the original when the teacher assigns member and original
/// the same class, the teacher's distribution for the member otherwise.
/// Argmax ties resolve to the lowest class index.
std::vector<double> soft_target_for(const augment::Payload& member,
                                    const augment::Payload& original,
                                    const std::vector<double>& model_out_x,
                                    const TeacherHandle& teacher);

/// Regression counterpart: the teacher's prediction replaces f_x only
/// when they differ by more than the threshold (strict inequality).
double regression_target_for(const augment::Payload& member, double f_x,
                             const TeacherHandle& teacher, double threshold = 0.5);

} // namespace mmel::teacher
