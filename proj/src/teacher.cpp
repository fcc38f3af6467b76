#include "mmel/teacher.hpp"

#include "mmel/checkpoint.hpp"

#include <cmath>
#include <stdexcept>

namespace mmel::teacher {

TeacherHandle TeacherHandle::load(diff::Model model, const std::string& checkpoint_path,
                                  TaskKind task) {
    TeacherHandle t;
    t.model_ = std::move(model);
    t.model_.validate();
    auto extras = diff::load_params(t.model_, checkpoint_path);
    if (extras.size() >= 2) {
        t.norm_.mean = extras[extras.size() - 2].values;
        t.norm_.stddev = extras[extras.size() - 1].values;
    }
    t.task_ = task;
    t.path_ = checkpoint_path;
    if (task == TaskKind::Regression && t.model_.output_shape() != diff::Shape{1}) {
        throw std::invalid_argument("teacher: regression checkpoint must have a scalar head, got " +
                                    diff::shape_str(t.model_.output_shape()));
    }
    return t;
}

std::vector<double> TeacherHandle::predict_probs(const augment::Payload& payload) const {
    if (task_ != TaskKind::Classification) {
        throw std::logic_error("teacher: predict_probs on a regression teacher");
    }
    diff::NoGradGuard guard;
    diff::Tensor out = model_.forward(features::single_input(payload, model_.input_shape(), norm_));
    return diff::probabilities_from_log(out.data());
}

double TeacherHandle::predict_value(const augment::Payload& payload) const {
    if (task_ != TaskKind::Regression) {
        throw std::logic_error("teacher: predict_value on a classification teacher");
    }
    diff::NoGradGuard guard;
    diff::Tensor out = model_.forward(features::single_input(payload, model_.input_shape(), norm_));
    return out.data()[0];
}

augment::AugmentedGroup relabel_hard(augment::AugmentedGroup group, const TeacherHandle& teacher) {
    group.validate();
    if (group.member_targets.size() != group.members.size()) {
        group.member_targets.assign(group.members.size(), group.original().label);
    }
    if (teacher.task() == TaskKind::Classification) {
        group.teacher_reference = teacher.predict_probs(group.original().payload);
        for (size_t i = 1; i < group.members.size(); ++i) {
            group.member_targets[i] = teacher.predict_probs(group.members[i].payload);
        }
    } else {
        group.teacher_reference = teacher.predict_value(group.original().payload);
        for (size_t i = 1; i < group.members.size(); ++i) {
            group.member_targets[i] = teacher.predict_value(group.members[i].payload);
        }
    }
    return group;
}

std::vector<double> soft_target_for(const augment::Payload& member,
                                    const augment::Payload& original,
                                    const std::vector<double>& model_out_x,
                                    const TeacherHandle& teacher) {
    const auto member_probs = teacher.predict_probs(member);
    const auto original_probs = teacher.predict_probs(original);
    if (diff::argmax(member_probs) == diff::argmax(original_probs)) {
        return model_out_x;
    }
    return member_probs;
}

double regression_target_for(const augment::Payload& member, double f_x,
                             const TeacherHandle& teacher, double threshold) {
    const double p = teacher.predict_value(member);
    return std::abs(f_x - p) > threshold ? p : f_x;
}

} // namespace mmel::teacher
