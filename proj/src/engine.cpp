#include "mmel/engine.hpp"

#include "mmel/checkpoint.hpp"
#include "mmel/losses.hpp"
#include "mmel/parallel.hpp"
#include "mmel/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace mmel {

int worker_count_from_env() {
    const char* env = std::getenv("MMEL_THREADS");
    if (!env || !*env) {
        const unsigned hw = std::thread::hardware_concurrency();
        return hw > 0 ? static_cast<int>(hw) : 1;
    }
    const long v = std::strtol(env, nullptr, 10);
    return v <= 0 ? 1 : static_cast<int>(v);
}

} // namespace mmel

namespace mmel::engine {

using augment::AugmentedGroup;
using augment::Label;
using augment::Payload;
using reweight::WeightVector;

std::string mode_name(Mode mode) {
    switch (mode) {
    case Mode::BaselineDa: return "baseline_da";
    case Mode::Uniform: return "uniform";
    case Mode::MmelHard: return "mmel_hard";
    case Mode::MmelSoft: return "mmel_soft";
    }
    return "?";
}

Mode mode_from_name(const std::string& name) {
    if (name == "baseline_da") return Mode::BaselineDa;
    if (name == "uniform") return Mode::Uniform;
    if (name == "mmel_hard") return Mode::MmelHard;
    if (name == "mmel_soft") return Mode::MmelSoft;
    throw std::invalid_argument("unknown mode '" + name +
                                "' (expected baseline_da, uniform, mmel_hard or mmel_soft)");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (n_aug < 0) throw std::invalid_argument("config: n_aug must be >= 0");
    if (mode == Mode::MmelSoft && n_aug == 0) {
        throw std::invalid_argument("config: mmel_soft needs augmented members (n_aug >= 1)");
    }
    mmel.validate();
    if (!(schedule.base > 0.0)) throw std::invalid_argument("config: lr must be positive");
    for (size_t i = 1; i < schedule.milestones.size(); ++i) {
        if (schedule.milestones[i] <= schedule.milestones[i - 1]) {
            throw std::invalid_argument("config: lr milestones must be strictly increasing");
        }
    }
}

namespace {

int class_of(const Label& label) {
    if (const auto* c = std::get_if<int>(&label)) return *c;
    if (const auto* soft = std::get_if<std::vector<double>>(&label)) {
        return static_cast<int>(diff::argmax(*soft));
    }
    throw std::invalid_argument("expected a class label, got a regression target");
}

double value_of(const Label& label) {
    if (const auto* r = std::get_if<double>(&label)) return *r;
    if (const auto* c = std::get_if<int>(&label)) return static_cast<double>(*c);
    throw std::invalid_argument("expected a scalar target, got a distribution");
}

// Loss of one member output against its target.
diff::Tensor member_loss(const diff::Tensor& out, const Label& target, TaskKind task) {
    if (task == TaskKind::Regression) {
        return diff::mse(out, std::vector<double>{value_of(target)});
    }
    if (const auto* c = std::get_if<int>(&target)) {
        return diff::cross_entropy_hard(out, *c);
    }
    if (const auto* soft = std::get_if<std::vector<double>>(&target)) {
        return diff::cross_entropy_soft(out, *soft);
    }
    throw std::invalid_argument("classification member has a regression target");
}

diff::Tensor combine_detached(std::span<const diff::Tensor> losses, const WeightVector& w) {
    return diff::linear_combination(losses, w.values());
}

// Weighted sum with the weights on the tape (detach_weights=false).
diff::Tensor combine_on_tape(std::span<const diff::Tensor> losses, double lambda_p) {
    diff::Tensor vec = diff::stack_scalars(losses);
    diff::Tensor w = diff::softmax_scaled(vec, 1.0 / lambda_p);
    return diff::dot(w, vec);
}

} // namespace

GroupStepResult group_step(const diff::Model& model, const AugmentedGroup& group,
                           const GroupStepOptions& opt, const features::Normalization& norm) {
    group.validate();
    const auto& targets = group.member_targets;
    if (targets.size() != group.members.size()) {
        throw std::invalid_argument("group '" + group.id + "': targets not prepared");
    }
    const diff::Shape& in_shape = model.input_shape();
    const size_t n = group.size();

    auto forward_member = [&](size_t j) {
        return model.forward(
            features::single_input(group.members[j].payload, in_shape, norm));
    };
    auto is_correct = [&](const diff::Tensor& out) {
        if (opt.task == TaskKind::Regression) return false;
        return static_cast<int>(diff::argmax(out.data())) == class_of(group.original().label);
    };

    GroupStepResult res;

    if (opt.mode == Mode::BaselineDa) {
        const size_t j = opt.baseline_pick % n;
        diff::Tensor out = forward_member(j);
        res.loss = member_loss(out, targets[j], opt.task);
        std::vector<double> w(n, 0.0);
        w[j] = 1.0;
        res.weights = WeightVector{std::move(w)};
        res.plain_loss = res.loss.value();
        res.value_with_entropy = res.loss.value();
        res.original_correct = is_correct(out);
        return res;
    }

    if (opt.mode == Mode::Uniform || opt.mode == Mode::MmelHard) {
        std::vector<diff::Tensor> losses;
        std::vector<double> values(n);
        losses.reserve(n);
        diff::Tensor first_out;
        for (size_t j = 0; j < n; ++j) {
            diff::Tensor out = forward_member(j);
            if (j == 0) first_out = out;
            losses.push_back(member_loss(out, targets[j], opt.task));
            values[j] = losses.back().value();
        }
        res.plain_loss = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
        res.original_correct = is_correct(first_out);

        if (opt.mode == Mode::Uniform) {
            res.weights = WeightVector{std::vector<double>(n, 1.0 / static_cast<double>(n))};
            res.loss = combine_detached(losses, res.weights);
            res.value_with_entropy = res.loss.value();
            return res;
        }
        res.weights = reweight::mmel_weights(values, opt.mmel.lambda_p);
        res.loss = opt.mmel.detach_weights ? combine_detached(losses, res.weights)
                                           : combine_on_tape(losses, opt.mmel.lambda_p);
        res.entropy_term = -opt.mmel.lambda_p * reweight::kl_to_uniform(res.weights);
        res.value_with_entropy = res.loss.value() + res.entropy_term;
        return res;
    }

    // mmel_soft
    if (n < 2) {
        throw std::invalid_argument("group '" + group.id +
                                    "': mmel_soft needs at least one augmented member");
    }
    diff::Tensor out_x = forward_member(0);
    diff::Tensor orig_loss = member_loss(out_x, targets[0], opt.task);
    res.original_correct = is_correct(out_x);

    std::vector<diff::Tensor> divs;
    std::vector<double> div_values(n - 1);
    divs.reserve(n - 1);
    if (opt.task == TaskKind::Classification) {
        const std::vector<double> student = diff::probabilities_from_log(out_x.data());
        const int ref_class =
            group.teacher_reference ? class_of(*group.teacher_reference) : -1;
        for (size_t j = 1; j < n; ++j) {
            diff::Tensor out = forward_member(j);
            const std::vector<double>* target = &student;
            if (group.teacher_reference) {
                // Drifted member: the teacher puts it in another class, so
                // matching the original's output would be misleading.
                const auto& cached = std::get<std::vector<double>>(targets[j]);
                if (class_of(targets[j]) != ref_class) target = &cached;
            }
            divs.push_back(diff::cross_entropy_soft(out, *target));
            div_values[j - 1] = divs.back().value();
        }
    } else {
        const double f_x = out_x.data()[0];
        for (size_t j = 1; j < n; ++j) {
            diff::Tensor out = forward_member(j);
            double target = f_x;
            if (group.teacher_reference) {
                const double p = value_of(targets[j]);
                if (std::abs(f_x - p) > opt.mmel.regression_threshold) target = p;
            }
            divs.push_back(diff::mse(out, std::vector<double>{target}));
            div_values[j - 1] = divs.back().value();
        }
    }

    res.weights = reweight::soft_weights(div_values, opt.mmel.lambda_p);
    diff::Tensor div_block;
    if (opt.mmel.detach_weights) {
        div_block = combine_detached(divs, res.weights);
    } else {
        div_block = combine_on_tape(divs, opt.mmel.lambda_p);
    }
    res.loss = diff::linear_combination(std::vector<diff::Tensor>{orig_loss, div_block},
                                        std::vector<double>{1.0, opt.mmel.lambda_t});
    res.entropy_term =
        -opt.mmel.lambda_t * opt.mmel.lambda_p * reweight::kl_to_uniform(res.weights);
    res.value_with_entropy = res.loss.value() + res.entropy_term;
    const double mean_div =
        std::accumulate(div_values.begin(), div_values.end(), 0.0) / static_cast<double>(n - 1);
    res.plain_loss = orig_loss.value() + opt.mmel.lambda_t * mean_div;
    return res;
}

void prepare_groups(std::vector<AugmentedGroup>& groups, const teacher::TeacherHandle* teacher) {
    if (!teacher) return;
    for (auto& g : groups) {
        g = teacher::relabel_hard(std::move(g), *teacher);
    }
}

TrainResult train(diff::Model& model, const TrainConfig& cfg, const Dataset& train_data,
                  const std::vector<AugmentedGroup>& groups, const Dataset& eval_data) {
    cfg.validate();
    if (train_data.samples.empty()) throw std::invalid_argument("train: empty training set");

    std::unordered_map<std::string, size_t> group_of;
    group_of.reserve(groups.size());
    for (size_t i = 0; i < groups.size(); ++i) group_of.emplace(groups[i].id, i);
    for (const auto& s : train_data.samples) {
        if (!group_of.count(s.id)) {
            throw std::invalid_argument("train: no augmentation group for sample '" + s.id + "'");
        }
    }

    TrainResult result;
    result.norm = features::image_normalization(train_data.samples);

    diff::SgdOptimizer opt(model, lr_at_epoch(cfg.schedule, 0), cfg.momentum, cfg.weight_decay);
    const size_t n_samples = train_data.samples.size();
    const size_t n_params = model.params().size();
    const int threads = std::max(cfg.threads, 1);

    std::vector<size_t> order(n_samples);
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at_epoch(cfg.schedule, epoch);
        opt.set_lr(lr);

        auto shuffle_rng = RngStream::keyed({cfg.seed, 0x73687566ULL, static_cast<uint64_t>(epoch)});
        for (size_t i = n_samples; i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
        }

        double sum_weighted = 0.0, sum_plain = 0.0, sum_entropy = 0.0, sum_maxw = 0.0;
        int64_t correct = 0;

        for (size_t start = 0, batch_idx = 0; start < n_samples;
             start += static_cast<size_t>(cfg.batch_size), ++batch_idx) {
            const size_t count =
                std::min(static_cast<size_t>(cfg.batch_size), n_samples - start);

            struct Slot {
                diff::GradSink sink;
                double weighted = 0.0, plain = 0.0, entropy = 0.0, maxw = 0.0;
                bool correct = false;
            };
            std::vector<Slot> slots(count);

            parallel_for(static_cast<int64_t>(count), threads, [&](int64_t i) {
                const auto& sample = train_data.samples[order[start + static_cast<size_t>(i)]];
                const AugmentedGroup& group = groups[group_of.at(sample.id)];

                GroupStepOptions gopt;
                gopt.mode = cfg.mode;
                gopt.mmel = cfg.mmel;
                gopt.task = cfg.task;
                if (cfg.mode == Mode::BaselineDa) {
                    auto pick_rng = RngStream::keyed({cfg.seed, 0x7069636bULL,
                                                      static_cast<uint64_t>(epoch),
                                                      fnv1a64(sample.id)});
                    gopt.baseline_pick = pick_rng.next_below(group.size());
                }

                GroupStepResult r = group_step(model, group, gopt, result.norm);
                const double v = r.loss.value();
                if (!std::isfinite(v)) {
                    throw std::runtime_error("NaN loss at epoch " + std::to_string(epoch) +
                                             ", batch " + std::to_string(batch_idx) +
                                             " (sample '" + sample.id + "')");
                }
                Slot& slot = slots[static_cast<size_t>(i)];
                slot.sink.slots.resize(n_params);
                diff::backward(r.loss, slot.sink);
                slot.weighted = v;
                slot.plain = r.plain_loss;
                slot.entropy = r.entropy_term;
                slot.maxw = *std::max_element(r.weights.w.begin(), r.weights.w.end());
                slot.correct = r.original_correct;
            });

            // Fixed-order reduction: results are identical for any worker count.
            const double inv = 1.0 / static_cast<double>(count);
            for (size_t p = 0; p < n_params; ++p) {
                std::vector<double> acc(static_cast<size_t>(model.params()[p].size()), 0.0);
                for (size_t i = 0; i < count; ++i) {
                    const auto& g = slots[i].sink.slots[p];
                    if (g.empty()) continue;
                    for (size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
                }
                for (double& v : acc) v *= inv;
                model.params()[p].accumulate_grad(acc);
            }
            opt.step();

            for (const auto& s : slots) {
                sum_weighted += s.weighted;
                sum_plain += s.plain;
                sum_entropy += s.entropy;
                sum_maxw += s.maxw;
                correct += s.correct ? 1 : 0;
            }
        }

        MetricsRecord rec;
        rec.epoch = epoch;
        const double inv_n = 1.0 / static_cast<double>(n_samples);
        rec.weighted_loss = sum_weighted * inv_n;
        rec.plain_loss = sum_plain * inv_n;
        rec.entropy_term = sum_entropy * inv_n;
        rec.max_weight = sum_maxw * inv_n;
        rec.train_acc = static_cast<double>(correct) * inv_n;
        rec.eval_acc =
            eval_data.samples.empty() ? 0.0 : evaluate(model, eval_data, result.norm, threads);
        rec.lr = lr;
        const auto t1 = std::chrono::steady_clock::now();
        rec.seconds = cfg.strict ? 0.0 : std::chrono::duration<double>(t1 - t0).count();
        result.metrics.push_back(rec);
    }

    if (!cfg.checkpoint_path.empty()) {
        auto records = diff::snapshot_params(model);
        if (!result.norm.identity()) {
            records.push_back({{static_cast<int>(result.norm.mean.size())}, result.norm.mean});
            records.push_back({{static_cast<int>(result.norm.stddev.size())}, result.norm.stddev});
        }
        diff::save_checkpoint(cfg.checkpoint_path, records);
    }
    return result;
}

double evaluate(const diff::Model& model, const Dataset& data,
                const features::Normalization& norm, int threads) {
    if (data.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
    constexpr size_t kBatch = 256;
    const size_t n = data.samples.size();
    const size_t n_batches = (n + kBatch - 1) / kBatch;

    std::vector<double> partial(n_batches, 0.0);
    parallel_for(static_cast<int64_t>(n_batches), threads, [&](int64_t b) {
        diff::NoGradGuard guard;
        const size_t start = static_cast<size_t>(b) * kBatch;
        const size_t count = std::min(kBatch, n - start);
        std::vector<const Payload*> payloads(count);
        for (size_t i = 0; i < count; ++i) payloads[i] = &data.samples[start + i].payload;
        diff::Tensor out =
            model.forward(features::batch_from_payloads(payloads, model.input_shape(), norm));
        const auto width = static_cast<size_t>(out.size()) / std::max<size_t>(count, 1);
        double acc = 0.0;
        for (size_t i = 0; i < count; ++i) {
            std::span<const double> row(out.data().data() + i * width, width);
            if (data.task == TaskKind::Classification) {
                acc += diff::argmax(row) == class_of(data.samples[start + i].label) ? 1.0 : 0.0;
            } else {
                const double d = row[0] - value_of(data.samples[start + i].label);
                acc += d * d;
            }
        }
        partial[static_cast<size_t>(b)] = acc;
    });
    // batch-order reduction
    double total = 0.0;
    for (double v : partial) total += v;
    return total / static_cast<double>(n);
}

void write_metrics_csv(const std::string& path, std::span<const MetricsRecord> records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << "epoch,weighted_loss,plain_loss,entropy_term,max_weight,train_acc,eval_acc,lr,seconds\n";
    char line[512];
    for (const auto& r : records) {
        std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.3f\n",
                      r.epoch, r.weighted_loss, r.plain_loss, r.entropy_term, r.max_weight,
                      r.train_acc, r.eval_acc, r.lr, r.seconds);
        os << line;
    }
    if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

} // namespace mmel::engine
