#include <doctest.h>

#include <cmath>

#include "taotf/pdoi.hpp"
#include "test_helpers.hpp"

using namespace taotf;
using taotf::testing::random_matrix;

TEST_CASE("pdoi_step closed-form cases") {
    pdoi::PdoiConfig cfg;

    CHECK((pdoi::pdoi_step(Matrix::Identity(2, 2), Matrix::Zero(2, 2), cfg).mat() -
           Matrix::Identity(2, 2))
              .norm() <= 1e-12);

    // zero-gradient step is pure Stiefel projection
    CHECK((pdoi::pdoi_step(2.0 * Matrix::Identity(2, 2), Matrix::Zero(2, 2), cfg).mat() -
           Matrix::Identity(2, 2))
              .norm() <= 1e-12);

    Matrix g = Matrix::Zero(2, 2);
    g(0, 0) = 1.0;
    CHECK((pdoi::pdoi_step(Matrix::Identity(2, 2), g, cfg).mat() - Matrix::Identity(2, 2))
              .norm() <= 1e-12);
}

TEST_CASE("config validation") {
    pdoi::PdoiConfig cfg;
    cfg.gamma = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.gradient_sign = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.max_iters = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero-gradient fixpoint returns x0 unchanged") {
    const auto x0 = stiefel::random_point(5, 3, 40);
    pdoi::PdoiConfig cfg;
    auto [point, trace] = pdoi::pdoi_init(
        x0.mat(), [](const Matrix& x) { return Matrix::Zero(x.rows(), x.cols()); }, cfg);
    CHECK((point.mat() - x0.mat()).norm() <= 1e-12);
    CHECK(trace.iterates_used <= 2);
}

TEST_CASE("scale invariance of the zero-gradient stopping state") {
    const auto x0 = stiefel::random_point(5, 3, 41);
    pdoi::PdoiConfig cfg;
    auto zero = [](const Matrix& x) { return Matrix::Zero(x.rows(), x.cols()); };
    auto [a, ta] = pdoi::pdoi_init(x0.mat(), zero, cfg);
    auto [b, tb] = pdoi::pdoi_init(Matrix(3.0 * x0.mat()), zero, cfg);
    CHECK((a.mat() - b.mat()).norm() <= 1e-10);
}

TEST_CASE("every iterate is on the manifold") {
    const Matrix x0 = random_matrix(6, 3, 50);
    pdoi::PdoiConfig cfg;
    cfg.max_iters = 20;
    cfg.rel_tol = 1e-15;  // force the loop to run
    int checked = 0;
    auto grad = [&](const Matrix& x) {
        if (checked++ > 0) CHECK(stiefel::is_on_manifold(x, 1e-8));  // all but x0
        return Matrix(0.1 * random_matrix(6, 3, 51 + checked));
    };
    auto [point, trace] = pdoi::pdoi_init(x0, grad, cfg);
    CHECK(stiefel::is_on_manifold(point.mat(), 1e-8));
    CHECK(trace.iterates_used == 20);
}

TEST_CASE("descent toward a quadratic target with gradient_sign -1") {
    // g(X) = ||X - A||_F^2 / 2, grad = X - A; with gamma = 2 the update is
    // polar(X + A), pulling iterates toward A.
    const auto target = stiefel::random_point(4, 2, 60);
    const auto x0 = stiefel::random_point(4, 2, 61);
    pdoi::PdoiConfig cfg;
    cfg.gamma = 2.0;
    cfg.gradient_sign = -1;
    auto grad = [&](const Matrix& x) { return Matrix(x - target.mat()); };
    auto obj = [&](const Matrix& x) { return 0.5 * (x - target.mat()).squaredNorm(); };
    auto [point, trace] = pdoi::pdoi_init(x0.mat(), grad, cfg, obj);

    const double initial = obj(x0.mat());
    CHECK((point.mat() - target.mat()).norm() < (x0.mat() - target.mat()).norm());
    CHECK(trace.objective_values.back() < initial);

    // oracle: Riemannian gradient-projection descent on the same objective
    auto ref = x0;
    for (int step = 0; step < 200; ++step)
        ref = stiefel::riemannian_step(ref, ref.mat() - target.mat(), 0.1);
    CHECK(trace.objective_values.back() <= obj(ref.mat()) + 1e-6);
}

TEST_CASE("deterministic traces") {
    const Matrix x0 = random_matrix(5, 2, 70);
    pdoi::PdoiConfig cfg;
    cfg.max_iters = 15;
    cfg.rel_tol = 1e-15;
    auto grad = [](const Matrix& x) { return Matrix(0.05 * x.array().sin().matrix()); };
    auto obj = [](const Matrix& x) { return x.squaredNorm(); };
    auto [a, ta] = pdoi::pdoi_init(x0, grad, cfg, obj);
    auto [b, tb] = pdoi::pdoi_init(x0, grad, cfg, obj);
    CHECK(a.mat() == b.mat());
    CHECK(ta.iterates_used == tb.iterates_used);
    CHECK(ta.final_delta == tb.final_delta);
    CHECK(ta.objective_values == tb.objective_values);
}

TEST_CASE("gradient callback failure reports the iteration index") {
    pdoi::PdoiConfig cfg;
    auto bad = [](const Matrix&) -> Matrix { throw std::runtime_error("boom"); };
    CHECK_THROWS_WITH_AS(pdoi::pdoi_init(Matrix::Identity(3, 2), bad, cfg),
                         doctest::Contains("iteration 1"), std::runtime_error);
}
