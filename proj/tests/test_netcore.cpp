#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <doctest.h>

#include "compcal/matrix.hpp"
#include "compcal/netcore.hpp"
#include "compcal/prob.hpp"
#include "compcal/rng.hpp"
#include "support/oracles.hpp"

using namespace compcal;
using testsupport::central_diff;
using testsupport::rel_err;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

}  // namespace

TEST_SUITE("netcore") {

TEST_CASE("softmax of equal logits is uniform") {
    const auto p = net::softmax(std::vector<double>{0.0, 0.0});
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax handles huge logits without overflow") {
    const auto p = net::softmax(std::vector<double>{1000.0, 0.0});
    CHECK(std::isfinite(p[0]));
    CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(p[1] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softmax of [1,2,3] matches the hand-computed distribution") {
    const auto p = net::softmax(std::vector<double>{1.0, 2.0, 3.0});
    CHECK(p[0] == doctest::Approx(0.090030573170).epsilon(1e-8));
    CHECK(p[1] == doctest::Approx(0.244728471055).epsilon(1e-8));
    CHECK(p[2] == doctest::Approx(0.665240955775).epsilon(1e-8));
}

TEST_CASE("softmax output sums to one and is shift invariant") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits(4);
        for (double& v : logits) v = 5.0 * rng.normal();
        const auto p = net::softmax(logits);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

        std::vector<double> shifted = logits;
        for (double& v : shifted) v += 17.5;
        const auto q = net::softmax(shifted);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-12));
    }
}

TEST_CASE("softmax rejects non-finite logits") {
    CHECK_THROWS(net::softmax(std::vector<double>{1.0, std::nan("")}));
    CHECK_THROWS(net::softmax(std::vector<double>{1.0, INFINITY}));
}

TEST_CASE("cross entropy of a distribution with itself equals its entropy") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = testsupport::random_simplex(5, rng);
        CHECK(net::cross_entropy(p, p) ==
              doctest::Approx(static_cast<double>(testsupport::ref_entropy(p))).epsilon(1e-10));
    }
}

TEST_CASE("cross entropy matches hand values") {
    const std::vector<double> half{0.5, 0.5};
    const std::vector<double> hot{1.0, 0.0};
    CHECK(net::cross_entropy(hot, hot) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(net::cross_entropy(half, hot) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const std::vector<double> quarter{0.25, 0.25, 0.25, 0.25};
    CHECK(net::cross_entropy(quarter, quarter) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects off-simplex inputs") {
    const std::vector<double> bad{0.7, 0.7};
    const std::vector<double> ok{0.5, 0.5};
    CHECK_THROWS(net::cross_entropy(bad, ok));
    CHECK_THROWS(net::cross_entropy(ok, bad));
}

TEST_CASE("softmax gradient with cross entropy equals probs minus targets over rows") {
    Rng rng(21);
    const std::size_t rows = 6, classes = 4;
    Matrix logits = random_matrix(rows, classes, rng);
    Matrix targets(rows, classes);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto t = testsupport::random_simplex(classes, rng);
        std::copy(t.begin(), t.end(), targets.data() + i * classes);
    }
    const Matrix probs = net::softmax_rows(logits);
    const Matrix grad = net::softmax_ce_grad(probs, targets);

    // Finite differences through the actual loss: mean row-wise CE of
    // softmax(logits) against the fixed targets.
    auto loss = [&]() {
        const Matrix p = net::softmax_rows(logits);
        return net::cross_entropy_mean(p, targets);
    };
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double fd = central_diff(logits.data() + i, loss);
        CHECK(rel_err(grad.data()[i], fd) < 1e-4);
    }
}

TEST_CASE("softmax gradient vanishes when prediction equals target") {
    Matrix logits = Matrix::from_rows({{0.3, 0.3, 0.3}});
    const Matrix probs = net::softmax_rows(logits);
    const Matrix grad = net::softmax_ce_grad(probs, probs);
    for (std::size_t i = 0; i < grad.size(); ++i) CHECK(std::abs(grad.data()[i]) < 1e-12);
}

TEST_CASE("affine forward matches a triple-loop product plus bias") {
    Rng rng(33);
    net::DenseLayer layer(5, 3);
    layer.init_he(rng);
    const Matrix x = random_matrix(7, 5, rng);
    const Matrix got = net::affine_forward(x, layer);
    Matrix want = testsupport::ref_matmul(x, layer.weights);
    for (std::size_t i = 0; i < want.rows(); ++i) {
        for (std::size_t j = 0; j < want.cols(); ++j) want(i, j) += layer.bias[j];
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("affine forward rejects shape mismatches") {
    net::DenseLayer layer(5, 3);
    const Matrix x(2, 4);
    CHECK_THROWS(net::affine_forward(x, layer));
}

TEST_CASE("affine backward gradients match finite differences") {
    Rng rng(44);
    net::DenseLayer layer(4, 3);
    layer.init_he(rng);
    Matrix x = random_matrix(5, 4, rng);
    Matrix targets(5, 3);
    for (std::size_t i = 0; i < 5; ++i) {
        const auto t = testsupport::random_simplex(3, rng);
        std::copy(t.begin(), t.end(), targets.data() + i * 3);
    }

    auto loss = [&]() {
        const Matrix out = net::affine_forward(x, layer);
        return net::cross_entropy_mean(net::softmax_rows(out), targets);
    };

    const Matrix out = net::affine_forward(x, layer);
    const Matrix probs = net::softmax_rows(out);
    const Matrix d_out = net::softmax_ce_grad(probs, targets);
    layer.zero_grad();
    const Matrix d_x = net::affine_backward(x, d_out, layer);

    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
        const double fd = central_diff(layer.weights.data() + i, loss);
        CHECK(rel_err(layer.grad_weights.data()[i], fd) < 1e-4);
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
        const double fd = central_diff(&layer.bias[i], loss);
        CHECK(rel_err(layer.grad_bias[i], fd) < 1e-4);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double fd = central_diff(x.data() + i, loss);
        CHECK(rel_err(d_x.data()[i], fd) < 1e-4);
    }
}

TEST_CASE("activations and their backward rules agree with finite differences") {
    Rng rng(55);
    for (net::Activation act :
         {net::Activation::kRelu, net::Activation::kTanh, net::Activation::kIdentity}) {
        Matrix x = random_matrix(4, 6, rng);
        // Keep relu inputs away from the kink where the derivative jumps.
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.1;
        }
        Matrix targets(4, 6);
        for (std::size_t i = 0; i < 4; ++i) {
            const auto t = testsupport::random_simplex(6, rng);
            std::copy(t.begin(), t.end(), targets.data() + i * 6);
        }
        auto loss = [&]() {
            Matrix post = x;
            net::activate(post, act);
            return net::cross_entropy_mean(net::softmax_rows(post), targets);
        };
        Matrix post = x;
        net::activate(post, act);
        const Matrix probs = net::softmax_rows(post);
        Matrix d = net::softmax_ce_grad(probs, targets);
        net::activate_backward(post, d, act);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double fd = central_diff(x.data() + i, loss);
            CHECK(rel_err(d.data()[i], fd) < 1e-4);
        }
    }
}

TEST_CASE("dropout is the identity in eval mode and at rate zero") {
    Rng rng(66);
    const Matrix x = random_matrix(3, 4, rng);
    Rng stream(1);
    CHECK(net::dropout_forward(x, 0.5, net::Mode::kEval, stream) == x);
    CHECK(net::dropout_forward(x, 0.0, net::Mode::kTrain, stream) == x);
}

TEST_CASE("dropout keep fraction concentrates around one minus rate") {
    Matrix x(100, 1000);
    x.fill(1.0);
    Rng stream(7);
    const Matrix y = net::dropout_forward(x, 0.5, net::Mode::kTrain, stream);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y.data()[i] != 0.0) {
            ++kept;
            CHECK(y.data()[i] == doctest::Approx(2.0).epsilon(1e-12));  // 1/(1-rate)
        }
    }
    const double frac = static_cast<double>(kept) / static_cast<double>(y.size());
    CHECK(frac > 0.49);
    CHECK(frac < 0.51);
}

TEST_CASE("dropout mask output reproduces the applied multipliers") {
    Rng rng(77);
    const Matrix x = random_matrix(5, 8, rng);
    Rng stream(3);
    Matrix mask;
    const Matrix y = net::dropout_forward(x, 0.3, net::Mode::kTrain, stream, &mask);
    REQUIRE(mask.rows() == x.rows());
    REQUIRE(mask.cols() == x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(y.data()[i] == doctest::Approx(x.data()[i] * mask.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("dropout rejects rates of one or more") {
    Rng stream(1);
    const Matrix x(2, 2);
    CHECK_THROWS(net::dropout_forward(x, 1.0, net::Mode::kTrain, stream));
}

TEST_CASE("one optimizer step matches the hand-unrolled update rule") {
    // Single scalar parameter, one step, worked through the update by hand.
    const double p0 = 2.0, g = 0.5, lr = 1e-3, wd = 0.1;
    std::vector<double> p{p0}, grad{g}, m{0.0}, v{0.0};
    net::AdamWConfig cfg;
    cfg.lr = lr;
    cfg.weight_decay = wd;
    net::adamw_update(p, grad, m, v, 1, lr, cfg);

    const double m1 = 0.1 * g;                  // (1-beta1)*g
    const double v1 = 0.001 * g * g;            // (1-beta2)*g^2
    const double mhat = m1 / (1.0 - 0.9);       // bias correction, t=1
    const double vhat = v1 / (1.0 - 0.999);
    const double expected =
        p0 - lr * wd * p0 - lr * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(m[0] == doctest::Approx(m1).epsilon(1e-12));
    CHECK(v[0] == doctest::Approx(v1).epsilon(1e-12));
}

TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
    std::vector<double> p{1.5}, grad{0.0}, m{0.0}, v{0.0};
    net::AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    net::adamw_update(p, grad, m, v, 1, cfg.lr, cfg);
    CHECK(p[0] == 1.5);
}

TEST_CASE("weight decay is decoupled from the moment estimates") {
    // With zero gradient the moments stay zero and the parameter shrinks by
    // exactly lr * wd * p — decay never leaks into m or v.
    std::vector<double> p{4.0}, grad{0.0}, m{0.0}, v{0.0};
    net::AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    net::adamw_update(p, grad, m, v, 1, cfg.lr, cfg);
    CHECK(p[0] == doctest::Approx(4.0 * (1.0 - 0.01 * 0.1)).epsilon(1e-14));
    CHECK(m[0] == 0.0);
    CHECK(v[0] == 0.0);
}

TEST_CASE("optimizer runs are deterministic") {
    auto run = [] {
        Rng rng(9);
        net::DenseLayer layer(3, 2);
        layer.init_he(rng);
        std::vector<net::ParamView> views{
            {layer.weights.data(), layer.grad_weights.data(), layer.weights.size()},
            {layer.bias.data(), layer.grad_bias.data(), layer.bias.size()}};
        net::AdamW opt(views);
        for (int step = 0; step < 10; ++step) {
            for (std::size_t i = 0; i < layer.grad_weights.size(); ++i) {
                layer.grad_weights.data()[i] = 0.01 * static_cast<double>(i + step);
            }
            for (std::size_t i = 0; i < layer.grad_bias.size(); ++i) {
                layer.grad_bias[i] = 0.02 * static_cast<double>(i);
            }
            opt.step();
        }
        return layer;
    };
    const net::DenseLayer a = run();
    const net::DenseLayer b = run();
    CHECK(a.weights == b.weights);
    CHECK(a.bias == b.bias);
}

TEST_CASE("linear learning-rate decay starts at full rate and never reaches zero") {
    CHECK(net::linear_decay_lr(1e-3, 0, 100) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(net::linear_decay_lr(1e-3, 50, 100) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(net::linear_decay_lr(1e-3, 99, 100) > 0.0);
}

TEST_CASE("he initialization has the right spread") {
    Rng rng(123);
    net::DenseLayer layer(512, 256);
    layer.init_he(rng);
    double sum = 0.0, sq = 0.0;
    const std::size_t n = layer.weights.size();
    for (std::size_t i = 0; i < n; ++i) {
        sum += layer.weights.data()[i];
        sq += layer.weights.data()[i] * layer.weights.data()[i];
    }
    const double mean = sum / static_cast<double>(n);
    const double stddev = std::sqrt(sq / static_cast<double>(n) - mean * mean);
    CHECK(std::abs(mean) < 0.005);
    CHECK(stddev == doctest::Approx(std::sqrt(2.0 / 512.0)).epsilon(0.05));
    for (double b : layer.bias) CHECK(b == 0.0);
}

TEST_CASE("dense layer parameter count is weights plus bias") {
    const net::DenseLayer layer(4, 3);
    CHECK(layer.param_count() == 15);
}

TEST_CASE("activation names round trip") {
    for (net::Activation a :
         {net::Activation::kRelu, net::Activation::kIdentity, net::Activation::kTanh}) {
        CHECK(net::activation_from_string(net::to_string(a)) == a);
    }
    CHECK_THROWS(net::activation_from_string("gelu"));
}

}  // TEST_SUITE
