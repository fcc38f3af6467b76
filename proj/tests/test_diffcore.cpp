#include <doctest.h>

#include "mmel/checkpoint.hpp"
#include "mmel/losses.hpp"
#include "mmel/model.hpp"
#include "mmel/optim.hpp"
#include "mmel/rng.hpp"
#include "mmel/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

using namespace mmel;
using namespace mmel::diff;

namespace {

Tensor row(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor::from_data({1, n}, std::move(v));
}

std::vector<double> log_of(std::vector<double> probs) {
    for (double& p : probs) p = std::log(p);
    return probs;
}

} // namespace

TEST_CASE("forward: identity dense into log-softmax") {
    Model m(Shape{2});
    m.add_dense(2, 2, /*bias=*/false).add_log_softmax();
    // identity weights
    auto w = m.params()[0].mutable_data();
    w[0] = 1.0; w[1] = 0.0; w[2] = 0.0; w[3] = 1.0;

    Tensor out = m.forward(row({1.0, 0.0}));
    CHECK(out.shape() == Shape{1, 2});
    CHECK(out.data()[0] == doctest::Approx(-0.3132616875182228).epsilon(1e-12));
    CHECK(out.data()[1] == doctest::Approx(-1.3132616875182228).epsilon(1e-12));
}

TEST_CASE("forward: zero weights give uniform log-probabilities") {
    Model m(Shape{4});
    m.add_dense(4, 3).add_log_softmax();
    Tensor out = m.forward(row({0.3, -2.0, 5.0, 1.0}));
    for (double v : out.data()) {
        CHECK(v == doctest::Approx(-std::log(3.0)).epsilon(1e-12));
    }
}

TEST_CASE("forward: empty batch passes through with zero rows") {
    Model m(Shape{3});
    m.add_dense(3, 2).add_log_softmax();
    m.init_params(7);
    Tensor out = m.forward(Tensor::zeros({0, 3}));
    CHECK(out.shape() == Shape{0, 2});
    CHECK(out.size() == 0);
}

TEST_CASE("forward: shape mismatch names the offending layer") {
    Model m(Shape{3});
    m.add_dense(4, 2); // inconsistent with the declared input on purpose
    CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("layer 0 (dense)"),
                         std::invalid_argument);
    CHECK_THROWS_AS(m.forward(row({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("forward: conv stack composes and pools") {
    Model m(Shape{1, 4, 4});
    m.add_conv2d(1, 2).add_relu().add_maxpool2().add_flatten().add_dense(8, 3).add_log_softmax();
    m.init_params(3);
    Tensor out = m.forward(Tensor::zeros({2, 1, 4, 4}));
    CHECK(out.shape() == Shape{2, 3});
}

TEST_CASE("conv3x3: center-tap kernel is the identity, corner tap shifts") {
    Tensor x = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    std::vector<double> k(9, 0.0);
    k[4] = 1.0; // center
    Tensor w = Tensor::from_data({1, 1, 3, 3}, k);
    Tensor y = conv3x3_forward(x, w, nullptr);
    for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

    std::vector<double> k2(9, 0.0);
    k2[0] = 1.0; // top-left tap reads x[i-1][j-1]
    Tensor w2 = Tensor::from_data({1, 1, 3, 3}, k2);
    Tensor y2 = conv3x3_forward(x, w2, nullptr);
    CHECK(y2.data()[0] == 0.0);      // out[0][0] <- x[-1][-1] = pad
    CHECK(y2.data()[4] == 1.0);      // out[1][1] <- x[0][0]
    CHECK(y2.data()[8] == 5.0);      // out[2][2] <- x[1][1]
}

TEST_CASE("maxpool2: forward picks the max, backward routes to it") {
    Tensor x = Tensor::param({1, 1, 2, 4}, {1, 7, 2, 3, 5, 0, 4, 9}, 0);
    Tensor y = maxpool2(x);
    CHECK(y.shape() == Shape{1, 1, 1, 2});
    CHECK(y.data()[0] == 7.0);
    CHECK(y.data()[1] == 9.0);
    Tensor total = linear_combination(std::vector<Tensor>{pick_negative(y, 0), pick_negative(y, 1)},
                                      std::vector<double>{-1.0, -2.0});
    backward(total);
    std::vector<double> expect{0, 1, 0, 0, 0, 0, 0, 2};
    for (int i = 0; i < 8; ++i) CHECK(x.grad()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("log-softmax rows satisfy logsumexp == 0") {
    auto rng = RngStream::keyed({11});
    std::vector<double> v(40);
    for (double& x : v) x = 20.0 * rng.next_double() - 10.0;
    Tensor t = log_softmax_rows(Tensor::from_data({8, 5}, v));
    for (int r = 0; r < 8; ++r) {
        double m = -1e300;
        for (int c = 0; c < 5; ++c) m = std::max(m, t.data()[r * 5 + c]);
        double s = 0.0;
        for (int c = 0; c < 5; ++c) s += std::exp(t.data()[r * 5 + c] - m);
        CHECK(std::abs(m + std::log(s)) < 1e-9);
    }
}

TEST_CASE("forward determinism: identical inputs give bitwise-identical outputs") {
    Model m(Shape{1, 8, 8});
    m.add_conv2d(1, 3).add_relu().add_maxpool2().add_flatten().add_dense(48, 4).add_log_softmax();
    m.init_params(5);
    auto rng = RngStream::keyed({17});
    std::vector<double> img(64);
    for (double& x : img) x = rng.next_double();
    Tensor a = m.forward(Tensor::from_data({1, 1, 8, 8}, img));
    Tensor b = m.forward(Tensor::from_data({1, 1, 8, 8}, img));
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(a.data()[i] == b.data()[i]); // exact
    }
}

TEST_CASE("cross_entropy_hard on frozen examples") {
    Tensor logp = row(log_of({0.5, 0.25, 0.25}));
    CHECK(cross_entropy_hard(logp, 0).value() == doctest::Approx(0.6931471805599453).epsilon(1e-12));

    Tensor uniform4 = row(log_of({0.25, 0.25, 0.25, 0.25}));
    for (int lbl = 0; lbl < 4; ++lbl) {
        CHECK(cross_entropy_hard(uniform4, lbl).value() ==
              doctest::Approx(1.3862943611198906).epsilon(1e-12));
    }

    // peaked at the label: loss tends to zero
    Tensor peaked = row(log_of({1.0 - 2e-12, 1e-12, 1e-12}));
    CHECK(cross_entropy_hard(peaked, 0).value() == doctest::Approx(0.0).epsilon(1e-9));

    CHECK_THROWS_AS(cross_entropy_hard(logp, 3), std::out_of_range);
    CHECK_THROWS_AS(cross_entropy_hard(logp, -1), std::out_of_range);
}

TEST_CASE("cross_entropy_soft on frozen examples") {
    Tensor logp = row(log_of({0.5, 0.5}));
    CHECK(cross_entropy_soft(logp, std::vector<double>{0.7, 0.3}).value() ==
          doctest::Approx(0.6931471805599453).epsilon(1e-12));

    // one-hot target reduces to the hard loss
    Tensor logp3 = row(log_of({0.6, 0.3, 0.1}));
    CHECK(cross_entropy_soft(logp3, std::vector<double>{0.0, 1.0, 0.0}).value() ==
          doctest::Approx(cross_entropy_hard(logp3, 1).value()).epsilon(1e-14));

    // uniform target against uniform logp -> ln C
    Tensor u = row(log_of({0.25, 0.25, 0.25, 0.25}));
    CHECK(cross_entropy_soft(u, std::vector<double>{0.25, 0.25, 0.25, 0.25}).value() ==
          doctest::Approx(1.3862943611198906).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy_soft(logp, std::vector<double>{0.7, 0.4}),
                    std::invalid_argument);
}

TEST_CASE("mse on frozen examples") {
    CHECK(mse(row({1, 3}), row({0, 0})).value() == doctest::Approx(5.0));
    CHECK(mse(row({2, -1}), row({2, -1})).value() == 0.0);
    CHECK(mse(row({4.5}), row({6.5})).value() == doctest::Approx(4.0));
    CHECK_THROWS_AS(mse(row({1, 2}), row({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("backward: quadratic and constant losses") {
    Tensor theta = Tensor::param({2}, {1.0, -2.0}, 0);
    Tensor loss = dot(theta, theta); // sum of squares
    backward(loss);
    CHECK(theta.grad()[0] == doctest::Approx(2.0));
    CHECK(theta.grad()[1] == doctest::Approx(-4.0));
    theta.clear_grad();

    // constant w.r.t. theta: multiply the only dependent term by zero
    Tensor loss2 = linear_combination(std::vector<Tensor>{dot(theta, theta)},
                                      std::vector<double>{0.0}, 3.5);
    CHECK(loss2.value() == doctest::Approx(3.5));
    backward(loss2);
    CHECK(theta.grad()[0] == 0.0);
    CHECK(theta.grad()[1] == 0.0);
}

TEST_CASE("backward: error paths") {
    Tensor theta = Tensor::param({2}, {1.0, 2.0}, 0);
    Tensor vec = stack_scalars(std::vector<Tensor>{dot(theta, theta), dot(theta, theta)});
    CHECK_THROWS_AS(backward(vec), std::invalid_argument); // non-scalar

    Tensor loss = dot(theta, theta);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::logic_error); // tape consumed

    Tensor constant = Tensor::scalar(1.0);
    CHECK_THROWS_AS(backward(constant), std::invalid_argument); // no tape
}

TEST_CASE("backward into a GradSink leaves parameter grads untouched") {
    Tensor theta = Tensor::param({2}, {1.0, -2.0}, 0);
    GradSink sink;
    sink.slots.resize(1);
    backward(dot(theta, theta), sink);
    CHECK(!theta.has_grad());
    REQUIRE(sink.slots[0].size() == 2);
    CHECK(sink.slots[0][0] == doctest::Approx(2.0));
    CHECK(sink.slots[0][1] == doctest::Approx(-4.0));
}

TEST_CASE("no-grad guard suppresses the tape") {
    Tensor theta = Tensor::param({2}, {1.0, -2.0}, 0);
    NoGradGuard guard;
    Tensor loss = dot(theta, theta);
    CHECK(!loss.requires_grad());
}

TEST_CASE("sgd_step: plain, momentum recurrence, and zero-grad behavior") {
    SUBCASE("plain step") {
        Model m(Shape{1});
        m.add_dense(1, 1, false);
        m.params()[0].mutable_data()[0] = 1.0;
        SgdOptimizer opt(m, 0.1, 0.0, 0.0);
        backward(linear_combination(
            std::vector<Tensor>{dense_forward(row({1.0}), m.params()[0], nullptr)},
            std::vector<double>{2.0}));
        // d(2*theta)/dtheta = 2
        opt.step();
        CHECK(m.params()[0].data()[0] == doctest::Approx(0.8));
        CHECK(!m.params()[0].has_grad()); // cleared
    }
    SUBCASE("momentum recurrence: two unit-gradient steps") {
        Model m(Shape{1});
        m.add_dense(1, 1, false);
        m.params()[0].mutable_data()[0] = 0.0;
        SgdOptimizer opt(m, 1.0, 0.9, 0.0);
        for (int i = 0; i < 2; ++i) {
            backward(dense_forward(row({1.0}), m.params()[0], nullptr));
            opt.step();
        }
        CHECK(m.params()[0].data()[0] == doctest::Approx(-2.9));
    }
    SUBCASE("zero gradient leaves theta unchanged") {
        Model m(Shape{1});
        m.add_dense(1, 1, false);
        m.params()[0].mutable_data()[0] = 4.0;
        SgdOptimizer opt(m, 0.5, 0.9, 0.0);
        backward(linear_combination(
            std::vector<Tensor>{dense_forward(row({1.0}), m.params()[0], nullptr)},
            std::vector<double>{0.0}));
        opt.step();
        CHECK(m.params()[0].data()[0] == 4.0);
    }
    SUBCASE("missing gradient is an error") {
        Model m(Shape{1});
        m.add_dense(1, 1, false);
        SgdOptimizer opt(m, 0.5, 0.0, 0.0);
        CHECK_THROWS_AS(opt.step(), std::logic_error);
    }
    SUBCASE("momentum 0, weight decay 0 equals theta - lr * grad exactly") {
        Model m(Shape{3});
        m.add_dense(3, 2);
        m.init_params(9);
        std::vector<double> before;
        for (auto& p : m.params()) {
            before.insert(before.end(), p.data().begin(), p.data().end());
        }
        Tensor out = m.forward(row({0.5, -1.0, 2.0}));
        backward(dot(out, out));
        std::vector<double> grads;
        for (auto& p : m.params()) grads.insert(grads.end(), p.grad().begin(), p.grad().end());
        SgdOptimizer opt(m, 0.25, 0.0, 0.0);
        opt.step();
        size_t k = 0;
        for (auto& p : m.params()) {
            for (double v : p.data()) {
                CHECK(v == before[k] - 0.25 * grads[k]); // exact
                ++k;
            }
        }
    }
}

TEST_CASE("lr_at_epoch follows the milestone schedule") {
    LrSchedule s{0.1, {60, 120, 160}, 0.2};
    CHECK(lr_at_epoch(s, 0) == doctest::Approx(0.1));
    CHECK(lr_at_epoch(s, 59) == doctest::Approx(0.1));
    CHECK(lr_at_epoch(s, 60) == doctest::Approx(0.02));
    CHECK(lr_at_epoch(s, 130) == doctest::Approx(0.004));
    CHECK(lr_at_epoch(s, 200) == doctest::Approx(0.0008));
}

TEST_CASE("checkpoint: f64 round-trip is bit-exact, f32 widens, bad magic rejected") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "mmel_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "t.mmel").string();

    auto rng = RngStream::keyed({23});
    std::vector<TensorRecord> recs;
    recs.push_back({{2, 3}, {}});
    for (int i = 0; i < 6; ++i) recs[0].values.push_back(rng.next_normal());
    recs.push_back({{4}, {1e-12, -7.0, 3.25, 0.1}});

    save_checkpoint(path, recs, CkptDtype::F64);
    auto back = load_checkpoint(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].shape == recs[0].shape);
    for (size_t i = 0; i < 6; ++i) CHECK(back[0].values[i] == recs[0].values[i]); // bit-exact
    for (size_t i = 0; i < 4; ++i) CHECK(back[1].values[i] == recs[1].values[i]);

    save_checkpoint(path, recs, CkptDtype::F32);
    auto narrow = load_checkpoint(path);
    for (size_t i = 0; i < 6; ++i) {
        CHECK(narrow[0].values[i] ==
              static_cast<double>(static_cast<float>(recs[0].values[i])));
    }

    // corrupt the magic
    {
        std::FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f);
        std::fputc('X', f);
        std::fclose(f);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"),
                         std::runtime_error);
}

TEST_CASE("checkpoint: model params round-trip with trailing extras") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "mmel_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "m.mmel").string();

    Model m(Shape{4});
    m.add_dense(4, 3).add_log_softmax();
    m.init_params(41);
    auto recs = snapshot_params(m);
    recs.push_back({{2}, {0.25, 0.5}}); // e.g. normalization vectors
    save_checkpoint(path, recs);

    Model m2(Shape{4});
    m2.add_dense(4, 3).add_log_softmax();
    auto extras = load_params(m2, path);
    REQUIRE(extras.size() == 1);
    CHECK(extras[0].values == std::vector<double>{0.25, 0.5});
    for (size_t p = 0; p < m.params().size(); ++p) {
        for (int64_t i = 0; i < m.params()[p].size(); ++i) {
            CHECK(m.params()[p].data()[i] == m2.params()[p].data()[i]);
        }
    }
}

TEST_CASE("model signature round-trips") {
    Model m(Shape{3, 8, 8});
    m.add_conv2d(3, 4).add_relu().add_maxpool2().add_flatten().add_dense(64, 10, false)
        .add_log_softmax();
    Model m2 = Model::from_signature({3, 8, 8}, m.signature());
    CHECK(m2.signature() == m.signature());
    CHECK(m2.output_shape() == Shape{10});
}
