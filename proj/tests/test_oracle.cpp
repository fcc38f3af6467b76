#include <doctest.h>

#include "mmel/losses.hpp"
#include "mmel/oracle.hpp"
#include "mmel/reweight.hpp"
#include "mmel/rng.hpp"

#include <cmath>
#include <vector>

using namespace mmel;
using namespace mmel::oracle;

namespace {

constexpr double kLn2 = 0.6931471805599453;

std::vector<std::vector<double>> collect_grads(diff::Model& m) {
    std::vector<std::vector<double>> out;
    for (auto& p : m.params()) {
        out.emplace_back(p.grad().begin(), p.grad().end());
        p.clear_grad();
    }
    return out;
}

} // namespace

TEST_CASE("project_to_simplex") {
    auto w = project_to_simplex(std::vector<double>{2.0, 0.0});
    CHECK(w[0] == doctest::Approx(1.0));
    CHECK(w[1] == doctest::Approx(0.0));

    auto id = project_to_simplex(std::vector<double>{0.25, 0.75});
    CHECK(id[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(id[1] == doctest::Approx(0.75).epsilon(1e-14));

    auto rng = RngStream::keyed({31});
    for (int t = 0; t < 200; ++t) {
        const size_t n = 1 + rng.next_below(8);
        std::vector<double> v(n);
        for (double& x : v) x = 4.0 * rng.next_double() - 2.0;
        auto p = project_to_simplex(v);
        double s = 0.0;
        for (double x : p) {
            CHECK(x >= 0.0);
            s += x;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("simplex_maximize on the canonical instances") {
    SUBCASE("equal losses stay uniform") {
        auto res = simplex_maximize(std::vector<double>{1.3, 1.3, 1.3}, 1.0);
        for (size_t i = 0; i < 3; ++i) {
            CHECK(res.weights[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
        }
    }
    SUBCASE("[0, ln2] at lambda 1 converges to [1/3, 2/3]") {
        auto res = simplex_maximize(std::vector<double>{0.0, kLn2}, 1.0);
        CHECK(std::abs(res.weights[0] - 1.0 / 3.0) < 1e-6);
        CHECK(std::abs(res.weights[1] - 2.0 / 3.0) < 1e-6);
        CHECK(res.converged);
    }
    SUBCASE("n = 1 returns immediately") {
        auto res = simplex_maximize(std::vector<double>{0.4}, 1.0);
        REQUIRE(res.weights.size() == 1);
        CHECK(res.weights[0] == 1.0);
        CHECK(res.iterations == 0);
    }
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(simplex_maximize(std::vector<double>{}, 1.0), std::invalid_argument);
        CHECK_THROWS_AS(simplex_maximize(std::vector<double>{1.0}, -1.0), std::invalid_argument);
        CHECK_THROWS_AS(simplex_maximize(std::vector<double>{1.0}, 1.0, 10, 0.0),
                        std::invalid_argument);
    }
}

TEST_CASE("simplex_maximize never beats the closed-form supremum") {
    auto rng = RngStream::keyed({32});
    for (int t = 0; t < 60; ++t) {
        const size_t n = 2 + rng.next_below(7);
        std::vector<double> losses(n);
        for (double& v : losses) v = 5.0 * rng.next_double();
        for (double lp : {0.1, 1.0, 10.0}) {
            auto res = simplex_maximize(losses, lp);
            const double closed = reweight::hard_objective(losses, lp).value;
            CHECK(res.value <= closed + 1e-9);
        }
    }
}

TEST_CASE("grid_maximize") {
    SUBCASE("n = 2 canonical instance at 1e-4 resolution") {
        auto w = grid_maximize(std::vector<double>{0.0, kLn2}, 1.0, 1e-4);
        CHECK(std::abs(w[0] - 1.0 / 3.0) <= 1e-4);
        CHECK(std::abs(w[1] - 2.0 / 3.0) <= 1e-4);
    }
    SUBCASE("n = 1") {
        auto w = grid_maximize(std::vector<double>{2.0}, 1.0, 1e-3);
        REQUIRE(w.size() == 1);
        CHECK(w[0] == 1.0);
    }
    SUBCASE("huge lambda lands within resolution of uniform") {
        auto w = grid_maximize(std::vector<double>{0.3, 4.2, 2.0}, 1e6, 1e-3);
        for (size_t i = 0; i < 3; ++i) CHECK(std::abs(w[i] - 1.0 / 3.0) <= 2e-3);
    }
    SUBCASE("n > 3 is rejected") {
        CHECK_THROWS_AS(grid_maximize(std::vector<double>{1, 2, 3, 4}, 1.0, 1e-2),
                        std::invalid_argument);
    }
    SUBCASE("grid and ascent agree within 2x resolution") {
        auto rng = RngStream::keyed({33});
        for (int t = 0; t < 10; ++t) {
            const size_t n = 2 + rng.next_below(2);
            std::vector<double> losses(n);
            for (double& v : losses) v = 5.0 * rng.next_double();
            for (double lp : {0.1, 1.0, 10.0}) {
                auto g = grid_maximize(losses, lp, 1e-3);
                auto a = simplex_maximize(losses, lp);
                for (size_t i = 0; i < n; ++i) {
                    CHECK(std::abs(g[i] - a.weights[i]) <= 2e-3);
                }
            }
        }
    }
}

TEST_CASE("finite_diff_grad on closed-form cases") {
    SUBCASE("quadratic loss") {
        diff::Model m(diff::Shape{1});
        m.add_dense(1, 2, false); // two scalars
        m.params()[0].mutable_data()[0] = 1.0;
        m.params()[0].mutable_data()[1] = -2.0;
        auto loss_fn = [](diff::Model& model, const diff::Tensor&) {
            double acc = 0.0;
            for (double v : model.params()[0].data()) acc += v * v;
            return acc;
        };
        auto g = finite_diff_grad(m, loss_fn, diff::Tensor::scalar(0.0), 1e-5);
        REQUIRE(g.size() == 1);
        CHECK(g[0][0] == doctest::Approx(2.0).epsilon(1e-8));
        CHECK(g[0][1] == doctest::Approx(-4.0).epsilon(1e-8));
    }
    SUBCASE("constant loss gives zeros") {
        diff::Model m(diff::Shape{2});
        m.add_dense(2, 2);
        m.init_params(1);
        auto g = finite_diff_grad(
            m, [](diff::Model&, const diff::Tensor&) { return 3.25; },
            diff::Tensor::scalar(0.0), 1e-5);
        for (const auto& pg : g) {
            for (double v : pg) CHECK(std::abs(v) < 1e-10);
        }
    }
    SUBCASE("eps must be positive") {
        diff::Model m(diff::Shape{2});
        m.add_dense(2, 2);
        CHECK_THROWS_AS(finite_diff_grad(
                            m, [](diff::Model&, const diff::Tensor&) { return 0.0; },
                            diff::Tensor::scalar(0.0), 0.0),
                        std::invalid_argument);
    }
}

TEST_CASE("backward matches central finite differences on random tiny MLPs") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        diff::Model m(diff::Shape{6});
        m.add_dense(6, 9).add_relu().add_dense(9, 5).add_log_softmax(); // 113 params
        m.init_params(seed * 31 + 7);

        auto rng = RngStream::keyed({seed, 77});
        std::vector<double> x(6);
        for (double& v : x) v = 2.0 * rng.next_double() - 1.0;
        const auto label = static_cast<int64_t>(rng.next_below(5));
        diff::Tensor batch = diff::Tensor::from_data({1, 6}, x);

        auto loss_fn = [label](diff::Model& model, const diff::Tensor& b) {
            return diff::cross_entropy_hard(model.forward(b), label).value();
        };
        auto fd = finite_diff_grad(m, loss_fn, batch, 1e-5);

        diff::backward(diff::cross_entropy_hard(m.forward(batch), label));
        auto bp = collect_grads(m);
        CHECK(relative_gap(fd, bp) < 1e-6);
    }
}

TEST_CASE("verify_theorem1 random-instance reports") {
    auto reports = verify_theorem1(60, 2024);
    REQUIRE(reports.size() == 60);
    for (const auto& r : reports) {
        CHECK(r.converged);
        CHECK(r.linf_gap < 1e-5);
        CHECK(r.value_gap < 1e-9);
        CHECK(r.losses.size() >= 2);
        CHECK(r.losses.size() <= 8);
    }

    SUBCASE("fixed seed reproduces the reports exactly") {
        auto again = verify_theorem1(60, 2024);
        for (size_t i = 0; i < reports.size(); ++i) {
            CHECK(again[i].losses == reports[i].losses);
            CHECK(again[i].lambda_p == reports[i].lambda_p);
            CHECK(again[i].oracle_w.w == reports[i].oracle_w.w);
            CHECK(again[i].linf_gap == reports[i].linf_gap);
        }
    }
}

TEST_CASE("tiny lambda with a wide spread concentrates both solvers") {
    std::vector<double> losses{0.0, 5.0};
    auto closed = reweight::mmel_weights(losses, 0.1);
    auto ascent = simplex_maximize(losses, 0.1);
    CHECK(closed[1] > 0.9999);
    CHECK(ascent.weights[1] > 0.9999);
}

TEST_CASE("degenerate equal-loss instance: both solvers uniform") {
    std::vector<double> losses{2.0, 2.0};
    auto closed = reweight::mmel_weights(losses, 1.0);
    auto ascent = simplex_maximize(losses, 1.0);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(std::abs(closed[i] - 0.5) < 1e-12);
        CHECK(std::abs(ascent.weights[i] - 0.5) < 1e-9);
    }
}
