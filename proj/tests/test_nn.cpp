#include "safemil/mlp.hpp"
#include "safemil/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace safemil;

TEST_CASE("mlp: parameter count and zero-parameter head outputs") {
    Mlp sig({4, 8, 1}, OutputHead::SigmoidScalar, 1);
    CHECK(sig.param_count() == (4 + 1) * 8 + (8 + 1) * 1);
    sig.zero_params();
    const Vector x = Vector::Constant(4, 0.3);
    CHECK(sig.forward(x)[0] == 0.5);  // sigma(0) exactly

    Mlp soft({3, 6, 4}, OutputHead::SoftmaxVector, 1);
    soft.zero_params();
    const Vector p = soft.forward(Vector::Constant(3, -1.0));
    for (int a = 0; a < 4; ++a) CHECK(p[a] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mlp: sigmoid output stays strictly inside (0,1)") {
    Mlp sig({2, 16, 1}, OutputHead::SigmoidScalar, 7);
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        Vector x(2);
        x << rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0);
        const Scalar y = sig.forward(x)[0];
        CHECK(y > 0.0);
        CHECK(y < 1.0);
    }
}

TEST_CASE("mlp: analytic sigmoid gradient at zero weights") {
    // single linear layer into the sigmoid head: y = sigma(w*x + b)
    Mlp model({1, 1}, OutputHead::SigmoidScalar, 0);
    model.zero_params();
    Mlp::Cache cache;
    const Matrix x = Matrix::Constant(1, 1, 1.0);
    model.forward_batch(x, cache);
    Vector grad = Vector::Zero(model.param_count());
    model.backward_batch(cache, Matrix::Constant(1, 1, 1.0), grad);
    CHECK(grad[0] == doctest::Approx(0.25).epsilon(1e-15));  // sigma'(0) * x
    CHECK(grad[1] == doctest::Approx(0.25).epsilon(1e-15));  // bias path
}

TEST_CASE("grad_check: constant loss has zero gradient") {
    const Mlp model({3, 5, 1}, OutputHead::LinearScalar, 2);
    const auto report = grad_check(
        model, [](const Mlp&, Vector&) { return 1.5; }, 0, 1e-5, 0);
    CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("grad_check: linear model is exact to rounding") {
    const Mlp model({4, 1}, OutputHead::LinearScalar, 3);
    const Vector x = Vector::LinSpaced(4, -1.0, 1.0);
    const auto loss = [&](const Mlp& m, Vector& grad) {
        Mlp::Cache cache;
        const Scalar y = m.forward_batch(x, cache)(0, 0);
        m.backward_batch(cache, Matrix::Constant(1, 1, 1.0), grad);
        return y;
    };
    const auto report = grad_check(model, loss, 0, 1e-5, 0);
    CHECK(report.max_rel_error < 1e-8);
    CHECK(report.probed == static_cast<int>(model.param_count()));
}

TEST_CASE("grad_check: three-layer tanh networks against central differences") {
    Rng seeds(17);
    for (int trial = 0; trial < 3; ++trial) {
        const Mlp model({5, 16, 16, 1}, OutputHead::SigmoidScalar, seeds.next_u64());
        Rng data_rng(seeds.next_u64());
        Matrix xs(5, 6);
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 5; ++i) xs(i, j) = data_rng.uniform(-2.0, 2.0);

        const auto loss = [&](const Mlp& m, Vector& grad) {
            Mlp::Cache cache;
            const Matrix out = m.forward_batch(xs, cache);
            // mean of squared outputs
            const Scalar value = out.array().square().sum() / out.cols();
            const Matrix upstream = 2.0 * out / out.cols();
            m.backward_batch(cache, upstream, grad);
            return value;
        };
        const auto report = grad_check(model, loss, 120, 1e-5, seeds.next_u64());
        CHECK(report.max_rel_error < 1e-4);
        CHECK(report.worst_index >= 0);
    }
}

TEST_CASE("grad_check: softmax NLL via logits path") {
    const Mlp model({4, 12, 3}, OutputHead::SoftmaxVector, 5);
    const Vector x = Vector::LinSpaced(4, 0.0, 1.0);
    const int target = 2;
    const auto loss = [&](const Mlp& m, Vector& grad) {
        Mlp::Cache cache;
        const Matrix logp = m.log_softmax_batch(x, cache);
        Matrix grad_logits = logp.array().exp();
        grad_logits(target, 0) -= 1.0;
        m.backward_logits_batch(cache, grad_logits, grad);
        return -logp(target, 0);
    };
    const auto report = grad_check(model, loss, 0, 1e-5, 0);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("adamw: zero gradient with zero decay leaves parameters unchanged") {
    Vector params = Vector::LinSpaced(6, -1.0, 1.0);
    const Vector before = params;
    AdamW opt(6, {1e-2, 0.9, 0.999, 1e-8, 0.0});
    opt.step(params, Vector::Zero(6));
    CHECK((params - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adamw: first step moves by -lr * sign(gradient)") {
    Vector params = Vector::Zero(3);
    Vector grad(3);
    grad << 0.3, -2.0, 1e-4;
    const Scalar lr = 1e-2;
    AdamW opt(3, {lr, 0.9, 0.999, 1e-8, 0.0});
    opt.step(params, grad);
    for (int i = 0; i < 3; ++i) {
        const Scalar expected = -lr * (grad[i] > 0 ? 1.0 : -1.0);
        CHECK(params[i] == doctest::Approx(expected).epsilon(1e-3));
    }
}

TEST_CASE("adamw: rejects non-finite gradients") {
    Vector params = Vector::Zero(2);
    Vector grad(2);
    grad << 1.0, std::numeric_limits<Scalar>::quiet_NaN();
    AdamW opt(2, {});
    CHECK_THROWS_AS(opt.step(params, grad), TrainingError);
}

TEST_CASE("adamw: 200 steps shrink a convex quadratic") {
    // loss = 0.5 |theta - target|^2
    Vector target(4);
    target << 1.0, -0.5, 2.0, 0.25;
    Vector params = Vector::Zero(4);
    AdamW opt(4, {5e-2, 0.9, 0.999, 1e-8, 0.0});
    const Scalar initial = 0.5 * (params - target).squaredNorm();
    Scalar final_loss = initial;
    for (int i = 0; i < 200; ++i) {
        const Vector grad = params - target;
        opt.step(params, grad);
        final_loss = 0.5 * (params - target).squaredNorm();
    }
    CHECK(final_loss < initial);
    CHECK(final_loss < 0.05 * initial);
}

TEST_CASE("mlp: identical seeds give bit-identical parameters and outputs") {
    const Mlp a({6, 32, 32, 2}, OutputHead::SoftmaxVector, 99);
    const Mlp b({6, 32, 32, 2}, OutputHead::SoftmaxVector, 99);
    CHECK(a.params() == b.params());
    const Vector x = Vector::Constant(6, 0.1);
    CHECK(a.forward(x) == b.forward(x));
}

TEST_CASE("checkpoint: round trip and truncation error") {
    const std::string dir = std::filesystem::temp_directory_path() / "safemil_nn_test";
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/model.bin";

    const Mlp model({3, 8, 1}, OutputHead::SigmoidScalar, 21, false);
    save_checkpoint(model, path, 1234);
    long steps = 0;
    const Mlp loaded = load_checkpoint(path, &steps);
    CHECK(steps == 1234);
    CHECK(loaded.params() == model.params());
    CHECK(loaded.head() == model.head());
    CHECK(loaded.layer_sizes() == model.layer_sizes());

    // truncate the parameter block
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 16);
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("encoders: one-hot layouts") {
    const Vector sa = encode_state_action(2, 1, 4, 3);
    CHECK(sa.size() == 7);
    CHECK(sa[2] == 1.0);
    CHECK(sa[4 + 1] == 1.0);
    CHECK(sa.sum() == doctest::Approx(2.0));
    CHECK_THROWS_AS(encode_state_action(4, 0, 4, 3), ContractError);
    CHECK_THROWS_AS(one_hot(-1, 3), ContractError);
}

TEST_CASE("mlp: optional linear input projection") {
    Mlp model({4, 6, 8, 1}, OutputHead::LinearScalar, 13, true);
    // with zero parameters everywhere the output is exactly zero either way;
    // check the gradient path instead
    const Vector x = Vector::Constant(4, 0.5);
    const auto loss = [&](const Mlp& m, Vector& grad) {
        Mlp::Cache cache;
        const Scalar y = m.forward_batch(x, cache)(0, 0);
        m.backward_batch(cache, Matrix::Constant(1, 1, 1.0), grad);
        return y;
    };
    const auto report = grad_check(model, loss, 0, 1e-5, 0);
    CHECK(report.max_rel_error < 1e-6);
}
