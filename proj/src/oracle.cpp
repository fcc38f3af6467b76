#include "mmel/oracle.hpp"

#include "mmel/engine.hpp"
#include "mmel/losses.hpp"
#include "mmel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mmel::oracle {

using reweight::WeightVector;

std::vector<double> project_to_simplex(std::span<const double> v) {
    const size_t n = v.size();
    if (n == 0) throw std::invalid_argument("project_to_simplex: empty vector");
    std::vector<double> u(v.begin(), v.end());
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cumsum = 0.0;
    double tau = 0.0;
    size_t rho = 0;
    for (size_t j = 0; j < n; ++j) {
        cumsum += u[j];
        const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) {
            rho = j + 1;
            tau = t;
        }
    }
    std::vector<double> w(n);
    for (size_t i = 0; i < n; ++i) w[i] = std::max(v[i] - tau, 0.0);
    // rho > 0 always holds; tau is exact up to roundoff, renormalize it away.
    (void)rho;
    double s = std::accumulate(w.begin(), w.end(), 0.0);
    if (s > 0.0) {
        for (double& x : w) x /= s;
    }
    return w;
}

namespace {

double objective(std::span<const double> losses, const std::vector<double>& w, double lambda_p) {
    const double n = static_cast<double>(w.size());
    double acc = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        acc += w[i] * losses[i];
        if (w[i] > 0.0) acc -= lambda_p * w[i] * std::log(n * w[i]);
    }
    return acc;
}

} // namespace

AscentResult simplex_maximize(std::span<const double> losses, double lambda_p, int max_iters,
                              double tol) {
    const size_t n = losses.size();
    if (n == 0) throw std::invalid_argument("simplex_maximize: empty loss vector");
    if (!(lambda_p > 0.0)) throw std::invalid_argument("simplex_maximize: lambda_p must be positive");
    if (!(tol > 0.0)) throw std::invalid_argument("simplex_maximize: tol must be positive");
    for (double v : losses) {
        if (!std::isfinite(v)) throw std::invalid_argument("simplex_maximize: non-finite loss");
    }
    if (n == 1) {
        return AscentResult{WeightVector{{1.0}}, losses[0], 0, true};
    }

    const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
    const double step0 = 0.1 * lambda_p / (1.0 + (*hi - *lo));
    const double nd = static_cast<double>(n);

    std::vector<double> w(n, 1.0 / nd);
    double f = objective(losses, w, lambda_p);
    std::vector<double> grad(n), trial(n);

    // Floor inside the ln for empty coordinates. It doubles as a re-entry
    // test: a zeroed coordinate rejoins the support only if its marginal
    // value at this mass beats the support level, i.e. only if its optimal
    // mass exceeds the floor. A much smaller floor makes near-zero-mass
    // coordinates look infinitely attractive, and the resulting flapping
    // blocks the line search.
    constexpr double kLnFloor = 1e-7;

    // Tries w + step * d (projected), halving until the objective improves.
    // Returns the improvement, 0 when no step length helps.
    auto backtrack = [&](const std::vector<double>& d, double nominal) -> double {
        double step = nominal;
        while (step > nominal * 0x1.0p-60) {
            for (size_t i = 0; i < n; ++i) trial[i] = w[i] + step * d[i];
            std::vector<double> cand = project_to_simplex(trial);
            const double fc = objective(losses, cand, lambda_p);
            if (fc > f) {
                const double improvement = fc - f;
                w = std::move(cand);
                f = fc;
                return improvement;
            }
            step *= 0.5;
        }
        return 0.0;
    };

    int iters = 0;
    bool converged = false;
    // Phase 1: plain projected gradient ascent with the nominal step.
    // Its per-iteration progress is bounded by the stiffest coordinate
    // (curvature lambda_p / w_i), so small-lambda instances with tiny
    // optimal masses converge slowly; it is run for at most a modest
    // budget to localize the support before the scaled phase below.
    const int plain_budget = std::min(max_iters, 30000);
    while (iters < plain_budget) {
        ++iters;
        for (size_t i = 0; i < n; ++i) {
            const double wi = std::max(w[i], kLnFloor);
            grad[i] = losses[i] - lambda_p * (std::log(nd * wi) + 1.0);
        }
        const double improvement = backtrack(grad, step0);
        if (improvement < tol) {
            converged = true;
            break;
        }
    }

    // Phase 2: same projection and halving rule, but along the
    // curvature-scaled ascent direction d_i = (w_i / lambda_p) *
    // (grad_i - sum_j w_j grad_j). The direction is tangent to the
    // simplex and equals the exact Newton step for this separable
    // objective, so the stiff small-mass coordinates converge at the
    // same pace as the large ones. Zero coordinates keep d_i = 0; the
    // support was settled in phase 1.
    std::vector<double> dir(n);
    for (int polish = 0; polish < 200 && iters < max_iters; ++polish) {
        ++iters;
        double level = 0.0;
        for (size_t i = 0; i < n; ++i) {
            if (w[i] > 0.0) {
                grad[i] = losses[i] - lambda_p * (std::log(nd * w[i]) + 1.0);
                level += w[i] * grad[i];
            } else {
                grad[i] = 0.0;
            }
        }
        for (size_t i = 0; i < n; ++i) {
            dir[i] = w[i] > 0.0 ? (w[i] / lambda_p) * (grad[i] - level) : 0.0;
        }
        const double improvement = backtrack(dir, 1.0);
        if (improvement < tol) {
            converged = true;
            break;
        }
    }
    return AscentResult{WeightVector{std::move(w)}, f, iters, converged};
}

WeightVector grid_maximize(std::span<const double> losses, double lambda_p, double resolution) {
    const size_t n = losses.size();
    if (n == 0 || n > 3) {
        throw std::invalid_argument("grid_maximize: only n in {1,2,3} is tractable, got n = " +
                                    std::to_string(n));
    }
    if (!(resolution > 0.0) || resolution >= 1.0) {
        throw std::invalid_argument("grid_maximize: resolution must lie in (0,1)");
    }
    if (n == 1) return WeightVector{{1.0}};

    const auto m = static_cast<int64_t>(std::llround(1.0 / resolution));
    const double md = static_cast<double>(m);
    std::vector<double> best;
    double best_f = -std::numeric_limits<double>::infinity();
    std::vector<double> w(n);
    if (n == 2) {
        for (int64_t i = 0; i <= m; ++i) {
            w[0] = static_cast<double>(i) / md;
            w[1] = static_cast<double>(m - i) / md;
            const double f = objective(losses, w, lambda_p);
            if (f > best_f) {
                best_f = f;
                best = w;
            }
        }
    } else {
        for (int64_t i = 0; i <= m; ++i) {
            for (int64_t j = 0; j <= m - i; ++j) {
                w[0] = static_cast<double>(i) / md;
                w[1] = static_cast<double>(j) / md;
                w[2] = static_cast<double>(m - i - j) / md;
                const double f = objective(losses, w, lambda_p);
                if (f > best_f) {
                    best_f = f;
                    best = w;
                }
            }
        }
    }
    // Grid points can miss the simplex sum by one ulp of the division.
    double s = std::accumulate(best.begin(), best.end(), 0.0);
    for (double& x : best) x /= s;
    return WeightVector{std::move(best)};
}

std::vector<std::vector<double>> finite_diff_grad(
    diff::Model& model, const std::function<double(diff::Model&, const diff::Tensor&)>& loss_fn,
    const diff::Tensor& batch, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    diff::NoGradGuard guard;
    std::vector<std::vector<double>> grads;
    grads.reserve(model.params().size());
    for (auto& p : model.params()) {
        auto data = p.mutable_data();
        std::vector<double> g(data.size());
        for (size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const double up = loss_fn(model, batch);
            data[i] = saved - eps;
            const double down = loss_fn(model, batch);
            data[i] = saved;
            g[i] = (up - down) / (2.0 * eps);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

double relative_gap(const std::vector<std::vector<double>>& a,
                    const std::vector<std::vector<double>>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("relative_gap: shape mismatch");
    double scale = 0.0;
    double gap = 0.0;
    for (size_t p = 0; p < a.size(); ++p) {
        if (a[p].size() != b[p].size()) throw std::invalid_argument("relative_gap: shape mismatch");
        for (size_t i = 0; i < a[p].size(); ++i) {
            scale = std::max({scale, std::abs(a[p][i]), std::abs(b[p][i])});
            gap = std::max(gap, std::abs(a[p][i] - b[p][i]));
        }
    }
    return gap / std::max(scale, 1e-12);
}

std::vector<OracleReport> verify_theorem1(int num_instances, uint64_t seed) {
    std::vector<OracleReport> reports;
    reports.reserve(static_cast<size_t>(std::max(num_instances, 0)));
    static constexpr double kLambdas[3] = {0.1, 1.0, 10.0};
    for (int k = 0; k < num_instances; ++k) {
        auto rng = RngStream::keyed({seed, 0x7468656f72656dULL, static_cast<uint64_t>(k)});
        const auto n = static_cast<size_t>(2 + rng.next_below(7)); // 2..8
        OracleReport rep;
        rep.lambda_p = kLambdas[rng.next_below(3)];
        rep.losses.resize(n);
        for (double& v : rep.losses) v = 5.0 * rng.next_double();

        rep.closed_w = reweight::mmel_weights(rep.losses, rep.lambda_p);
        AscentResult ascent = simplex_maximize(rep.losses, rep.lambda_p);
        rep.iterations = ascent.iterations;
        rep.converged = ascent.converged;
        for (size_t i = 0; i < n; ++i) {
            rep.linf_gap = std::max(rep.linf_gap, std::abs(ascent.weights[i] - rep.closed_w[i]));
        }
        const double closed_value = reweight::expected_loss(rep.losses, rep.closed_w, rep.lambda_p);
        rep.value_gap =
            std::abs(closed_value - reweight::log_mean_exp_objective(rep.losses, rep.lambda_p));
        rep.oracle_w = std::move(ascent.weights);
        reports.push_back(std::move(rep));
    }
    return reports;
}

namespace {

std::vector<std::vector<double>> tape_gradients(diff::Model& model, const diff::Tensor& loss) {
    diff::backward(loss);
    std::vector<std::vector<double>> out;
    out.reserve(model.params().size());
    for (auto& p : model.params()) {
        out.emplace_back(p.grad().begin(), p.grad().end());
        p.clear_grad();
    }
    return out;
}

} // namespace

GroupGradCheck check_group_gradients(int seeds, double eps) {
    GroupGradCheck report;
    report.seeds = seeds;
    const features::Normalization identity;
    const double lambda_p = 0.8;
    const double lambda_t = 1.3;

    for (int s = 0; s < seeds; ++s) {
        diff::Model model = diff::Model::from_signature(
            {1, 1, 6}, "flatten|dense(6,8)|relu|dense(8,4)|logsoftmax");
        model.init_params(static_cast<uint64_t>(s) * 101 + 11);

        auto rng = RngStream::keyed({static_cast<uint64_t>(s), 0x67636bULL});
        augment::AugmentedGroup group;
        group.id = "gc:" + std::to_string(s);
        const int label = static_cast<int>(rng.next_below(4));
        for (int m = 0; m < 4; ++m) {
            augment::ImagePayload img;
            img.channels = 1;
            img.height = 1;
            img.width = 6;
            img.data.resize(6);
            for (float& v : img.data) v = static_cast<float>(rng.next_double());
            augment::Sample sample;
            sample.id = m == 0 ? group.id : group.id + "#" + std::to_string(m);
            sample.payload = std::move(img);
            sample.label = label;
            group.members.push_back(std::move(sample));
            group.member_targets.push_back(label);
        }

        auto member_loss_value = [&](const diff::Model& m2, size_t j) {
            diff::Tensor out = m2.forward(
                features::single_input(group.members[j].payload, m2.input_shape(), identity));
            return diff::cross_entropy_hard(out, label).value();
        };

        engine::GroupStepOptions opt;
        opt.mmel.lambda_p = lambda_p;
        opt.mmel.lambda_t = lambda_t;

        // Hard mode: the detached weighted loss differentiates the maximal
        // objective lambda_p * log-mean-exp(member losses / lambda_p).
        opt.mode = engine::Mode::MmelHard;
        auto bp = tape_gradients(model, engine::group_step(model, group, opt, identity).loss);
        auto fd = finite_diff_grad(
            model,
            [&](diff::Model& m2, const diff::Tensor&) {
                std::vector<double> losses(group.size());
                for (size_t j = 0; j < group.size(); ++j) losses[j] = member_loss_value(m2, j);
                return reweight::log_mean_exp_objective(losses, lambda_p);
            },
            diff::Tensor::scalar(0.0), eps);
        report.hard_gap = std::max(report.hard_gap, relative_gap(fd, bp));

        // Soft mode: targets (the original's output probabilities) are
        // frozen at the base parameters, matching their detachment.
        opt.mode = engine::Mode::MmelSoft;
        std::vector<double> frozen_target;
        {
            diff::NoGradGuard guard;
            diff::Tensor out_x = model.forward(
                features::single_input(group.members[0].payload, model.input_shape(), identity));
            frozen_target = diff::probabilities_from_log(out_x.data());
        }
        bp = tape_gradients(model, engine::group_step(model, group, opt, identity).loss);
        fd = finite_diff_grad(
            model,
            [&](diff::Model& m2, const diff::Tensor&) {
                diff::Tensor out_x = m2.forward(features::single_input(
                    group.members[0].payload, m2.input_shape(), identity));
                const double orig = diff::cross_entropy_hard(out_x, label).value();
                std::vector<double> divs(group.size() - 1);
                for (size_t j = 1; j < group.size(); ++j) {
                    diff::Tensor out = m2.forward(features::single_input(
                        group.members[j].payload, m2.input_shape(), identity));
                    divs[j - 1] = diff::cross_entropy_soft(out, frozen_target).value();
                }
                return orig + lambda_t * reweight::log_mean_exp_objective(divs, lambda_p);
            },
            diff::Tensor::scalar(0.0), eps);
        report.soft_gap = std::max(report.soft_gap, relative_gap(fd, bp));
    }
    return report;
}

} // namespace mmel::oracle
