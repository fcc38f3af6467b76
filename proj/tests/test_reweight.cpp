#include <doctest.h>

#include "mmel/oracle.hpp"
#include "mmel/reweight.hpp"
#include "mmel/rng.hpp"

#include <cmath>
#include <vector>

using namespace mmel;
using namespace mmel::reweight;

namespace {

constexpr double kLn2 = 0.6931471805599453;
constexpr double kLn3 = 1.0986122886681098;

// Dirichlet(1) point on the simplex: normalized exponentials.
std::vector<double> random_simplex_point(RngStream& rng, size_t n) {
    std::vector<double> w(n);
    double s = 0.0;
    for (double& v : w) {
        v = -std::log(1.0 - rng.next_double());
        s += v;
    }
    for (double& v : w) v /= s;
    return w;
}

std::vector<double> random_losses(RngStream& rng, size_t n, double hi = 5.0) {
    std::vector<double> l(n);
    for (double& v : l) v = hi * rng.next_double();
    return l;
}

} // namespace

TEST_CASE("kl_to_uniform: frozen values and edge conventions") {
    CHECK(kl_to_uniform(WeightVector{{0.25, 0.25, 0.25, 0.25}}) == 0.0);
    CHECK(kl_to_uniform(WeightVector{{1.0, 0.0}}) == doctest::Approx(kLn2).epsilon(1e-14));
    CHECK(kl_to_uniform(WeightVector{{0.75, 0.25}}) ==
          doctest::Approx(0.13081203594113697).epsilon(1e-14));
    // nonnegative for random points
    auto rng = RngStream::keyed({1});
    for (int t = 0; t < 200; ++t) {
        auto w = random_simplex_point(rng, 2 + rng.next_below(7));
        CHECK(kl_to_uniform(WeightVector{w}) >= 0.0);
    }
}

TEST_CASE("expected_loss: frozen values") {
    WeightVector w{{1.0 / 3.0, 2.0 / 3.0}};
    std::vector<double> losses{0.0, kLn2};
    CHECK(expected_loss(losses, w, 1.0) ==
          doctest::Approx(0.4054651081081644).epsilon(1e-12)); // ln 1.5

    // single element: w is forced to [1], value is the loss itself
    CHECK(expected_loss(std::vector<double>{2.75}, WeightVector{{1.0}}, 3.0) == 2.75);

    CHECK_THROWS_AS(expected_loss(std::vector<double>{1.0, 2.0}, WeightVector{{1.0}}, 1.0),
                    std::invalid_argument);
}

TEST_CASE("expected_loss with uniform weights reduces to the plain mean") {
    auto rng = RngStream::keyed({2});
    for (int t = 0; t < 300; ++t) {
        const size_t n = 1 + rng.next_below(8);
        auto losses = random_losses(rng, n);
        WeightVector u{std::vector<double>(n, 1.0 / static_cast<double>(n))};
        double mean = 0.0;
        for (double v : losses) mean += v;
        mean /= static_cast<double>(n);
        CHECK(std::abs(expected_loss(losses, u, 0.1 + 10.0 * rng.next_double()) - mean) < 1e-12);
    }
}

TEST_CASE("mmel_weights: frozen values and simplex invariants") {
    SUBCASE("equal losses give uniform weights") {
        auto w = mmel_weights(std::vector<double>{1.7, 1.7, 1.7}, 0.5);
        for (size_t i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("[0, ln2] at lambda 1 gives [1/3, 2/3]") {
        auto w = mmel_weights(std::vector<double>{0.0, kLn2}, 1.0);
        CHECK(w[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
        CHECK(w[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    }
    SUBCASE("[1, 2] at lambda 0.5") {
        auto w = mmel_weights(std::vector<double>{1.0, 2.0}, 0.5);
        CHECK(w[0] == doctest::Approx(0.11920292202211755).epsilon(1e-14));
        CHECK(w[1] == doctest::Approx(0.8807970779778824).epsilon(1e-14));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(mmel_weights(std::vector<double>{}, 1.0), std::invalid_argument);
        CHECK_THROWS_AS(mmel_weights(std::vector<double>{1.0, std::nan("")}, 1.0),
                        std::invalid_argument);
        CHECK_THROWS_AS(mmel_weights(std::vector<double>{1.0}, 0.0), std::invalid_argument);
    }
    SUBCASE("simplex invariants on random instances") {
        auto rng = RngStream::keyed({3});
        for (int t = 0; t < 500; ++t) {
            const size_t n = 1 + rng.next_below(8);
            auto losses = random_losses(rng, n);
            const double lp = std::exp(3.0 * (rng.next_double() - 0.5));
            auto w = mmel_weights(losses, lp);
            double s = 0.0;
            for (size_t i = 0; i < w.size(); ++i) {
                CHECK(w[i] >= 0.0);
                s += w[i];
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
    SUBCASE("strict monotonicity: larger loss, larger weight") {
        auto rng = RngStream::keyed({4});
        for (int t = 0; t < 300; ++t) {
            const size_t n = 2 + rng.next_below(7);
            auto losses = random_losses(rng, n);
            for (double lp : {0.1, 1.0, 10.0}) {
                auto w = mmel_weights(losses, lp);
                for (size_t i = 0; i < n; ++i) {
                    for (size_t j = 0; j < n; ++j) {
                        if (losses[i] > losses[j]) CHECK(w.w[i] > w.w[j]);
                    }
                }
            }
        }
    }
}

TEST_CASE("hard_objective: frozen values and the grid cross-check") {
    SUBCASE("[0, ln2] at lambda 1") {
        auto [value, w] = hard_objective(std::vector<double>{0.0, kLn2}, 1.0);
        CHECK(value == doctest::Approx(0.4054651081081644).epsilon(1e-12));
        CHECK(w[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(w[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        // independent confirmation by exhaustive scan
        auto grid = oracle::grid_maximize(std::vector<double>{0.0, kLn2}, 1.0, 1e-4);
        CHECK(std::abs(grid[0] - w[0]) <= 1e-4);
        CHECK(std::abs(grid[1] - w[1]) <= 1e-4);
    }
    SUBCASE("constant losses collapse to the constant") {
        auto [value, w] = hard_objective(std::vector<double>{2.5, 2.5, 2.5, 2.5}, 0.7);
        CHECK(value == doctest::Approx(2.5).epsilon(1e-14));
        for (size_t i = 0; i < 4; ++i) CHECK(w[i] == doctest::Approx(0.25).epsilon(1e-14));
    }
    SUBCASE("lambda 10 on [0,1] sits near the mean") {
        auto [value, w] = hard_objective(std::vector<double>{0.0, 1.0}, 10.0);
        CHECK(value == doctest::Approx(0.5124947951362563).epsilon(1e-12));
    }
}

TEST_CASE("hard_objective equals the log-mean-exp identity within 1e-9") {
    auto rng = RngStream::keyed({5});
    for (int t = 0; t < 500; ++t) {
        const size_t n = 1 + rng.next_below(8);
        auto losses = random_losses(rng, n);
        for (double lp : {0.1, 1.0, 10.0}) {
            auto [value, w] = hard_objective(losses, lp);
            CHECK(std::abs(value - log_mean_exp_objective(losses, lp)) < 1e-9);
        }
    }
}

TEST_CASE("maximality: no random simplex point beats the closed form") {
    auto rng = RngStream::keyed({6});
    for (int t = 0; t < 200; ++t) {
        const size_t n = 2 + rng.next_below(7);
        auto losses = random_losses(rng, n);
        for (double lp : {0.1, 1.0, 10.0}) {
            const double best = hard_objective(losses, lp).value;
            for (int r = 0; r < 40; ++r) {
                WeightVector w{random_simplex_point(rng, n)};
                CHECK(expected_loss(losses, w, lp) <= best + 1e-12);
            }
        }
    }
}

TEST_CASE("limit behavior of the weights") {
    auto rng = RngStream::keyed({7});
    SUBCASE("huge lambda approaches uniform") {
        for (int t = 0; t < 100; ++t) {
            const size_t n = 2 + rng.next_below(7);
            auto losses = random_losses(rng, n);
            auto w = mmel_weights(losses, 1e6);
            for (size_t i = 0; i < n; ++i) {
                CHECK(std::abs(w[i] - 1.0 / static_cast<double>(n)) < 1e-4);
            }
        }
    }
    SUBCASE("tiny lambda concentrates on the argmax") {
        for (int t = 0; t < 100; ++t) {
            const size_t n = 2 + rng.next_below(7);
            auto losses = random_losses(rng, n);
            // enforce a unique, clearly separated maximum
            const size_t star = rng.next_below(n);
            losses[star] = 6.0;
            auto w = mmel_weights(losses, 1e-6);
            CHECK(w[star] > 1.0 - 1e-6);
        }
    }
}

TEST_CASE("shift invariance: weights bitwise stable, value shifted exactly") {
    auto rng = RngStream::keyed({8});
    for (int t = 0; t < 200; ++t) {
        const size_t n = 2 + rng.next_below(7);
        // Quantize to multiples of 2^-20 so that loss + shift is exact in
        // binary64 and the max-subtracted differences are bit-identical.
        std::vector<double> losses(n);
        for (double& v : losses) {
            v = static_cast<double>(rng.next_below(5u << 20)) * 0x1.0p-20;
        }
        const double shift = static_cast<double>(1 + rng.next_below(8));
        std::vector<double> shifted = losses;
        for (double& v : shifted) v += shift;
        for (double lp : {0.1, 1.0, 10.0}) {
            auto w0 = mmel_weights(losses, lp);
            auto w1 = mmel_weights(shifted, lp);
            for (size_t i = 0; i < n; ++i) CHECK(w0[i] == w1[i]); // bitwise
            const double v0 = hard_objective(losses, lp).value;
            const double v1 = hard_objective(shifted, lp).value;
            CHECK(std::abs((v1 - v0) - shift) < 1e-9);
        }
    }
}

TEST_CASE("soft_weights: frozen values and the degenerate-group error") {
    SUBCASE("all divergences zero gives uniform") {
        auto w = soft_weights(std::vector<double>{0.0, 0.0, 0.0}, 1.0);
        for (size_t i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("[0, ln3] at lambda 1 gives [1/4, 3/4]") {
        auto w = soft_weights(std::vector<double>{0.0, kLn3}, 1.0);
        CHECK(w[0] == doctest::Approx(0.25).epsilon(1e-14));
        CHECK(w[1] == doctest::Approx(0.75).epsilon(1e-14));
    }
    SUBCASE("single augmented member") {
        auto w = soft_weights(std::vector<double>{0.42}, 1.0);
        REQUIRE(w.size() == 1);
        CHECK(w[0] == 1.0);
    }
    SUBCASE("empty divergence vector signals |B| = 1") {
        CHECK_THROWS_AS(soft_weights(std::vector<double>{}, 1.0), std::invalid_argument);
    }
}

TEST_CASE("soft_objective: frozen values and linearity in lambda_t") {
    MmelConfig cfg;
    cfg.lambda_p = 1.0;
    cfg.lambda_t = 1.0;
    SUBCASE("all divergences zero returns orig_loss exactly") {
        auto [value, w] = soft_objective(0.87, std::vector<double>{0.0, 0.0, 0.0}, cfg);
        CHECK(value == doctest::Approx(0.87).epsilon(1e-14));
    }
    SUBCASE("orig 1, div [0, ln3] gives 1 + ln2") {
        auto [value, w] = soft_objective(1.0, std::vector<double>{0.0, kLn3}, cfg);
        CHECK(value == doctest::Approx(1.6931471805599454).epsilon(1e-12));
    }
    SUBCASE("lambda_t doubles the divergence block") {
        cfg.lambda_t = 2.0;
        auto [value, w] = soft_objective(1.0, std::vector<double>{0.0, kLn3}, cfg);
        CHECK(value == doctest::Approx(1.0 + 2.0 * kLn2).epsilon(1e-12));
    }
    SUBCASE("config validation") {
        MmelConfig bad;
        bad.lambda_p = 0.0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        bad.lambda_p = 1.0;
        bad.lambda_t = -1.0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}

TEST_CASE("WeightVector::checked rejects invalid points") {
    CHECK_THROWS_AS(WeightVector::checked({0.5, 0.4}), std::invalid_argument);
    CHECK_THROWS_AS(WeightVector::checked({1.5, -0.5}), std::invalid_argument);
    CHECK_THROWS_AS(WeightVector::checked({}), std::invalid_argument);
    auto ok = WeightVector::checked({0.5, 0.5});
    CHECK(ok.size() == 2);
}
