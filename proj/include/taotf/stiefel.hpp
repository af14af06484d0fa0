#pragma once

#include <cstdint>

#include "taotf/linalg.hpp"

namespace taotf::stiefel {

// Column-orthonormal n x p matrix, n >= p. Construction validates membership.
class StiefelPoint {
public:
    explicit StiefelPoint(Matrix m, double tol = 1e-8);

    const Matrix& mat() const { return mat_; }
    double tol() const { return tol_; }
    Eigen::Index rows() const { return mat_.rows(); }
    Eigen::Index cols() const { return mat_.cols(); }

private:
    Matrix mat_;
    double tol_;
};

bool is_on_manifold(const Matrix& x, double tol = 1e-8);

// Polar projection onto the manifold; throws on rank deficiency.
StiefelPoint project(const Matrix& a);

// Haar-distributed random point: QR of a seeded Gaussian matrix with the R
// diagonal sign-fixed positive. Deterministic per seed.
StiefelPoint random_point(Eigen::Index n, Eigen::Index p, std::uint64_t seed);

// Euclidean-metric projection of g onto the tangent space at x:
// T = g - x * sym(x^T g).
Matrix tangent_project(const StiefelPoint& x, const Matrix& g);

// One step of retraction-based Riemannian descent with polar retraction.
StiefelPoint riemannian_step(const StiefelPoint& x, const Matrix& g, double lr);

}  // namespace taotf::stiefel
