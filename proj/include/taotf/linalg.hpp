#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace taotf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

// Thin SVD of an n x p matrix: A = U * sigma.asDiagonal() * V^T with
// r = min(n, p), U n x r, V p x r, sigma sorted non-increasing.
struct SvdResult {
    Matrix u;
    Vector sigma;
    Matrix v;

    Matrix recompose() const { return u * sigma.asDiagonal() * v.transpose(); }
};

struct SvdOptions {
    int max_sweeps = 60;
    double rel_tol = 1e-12;  // off-diagonal tolerance, relative
};

// One-sided Jacobi SVD. Accurate for the small dense matrices this project
// works with; throws std::runtime_error if the sweep cap is hit and
// std::invalid_argument on non-finite input.
SvdResult svd(const Matrix& a, const SvdOptions& opts = {});

// Orthogonal polar factor Q = U V^T, the nearest column-orthonormal matrix to
// `a` in Frobenius norm. Requires rows >= cols and full column rank
// (sigma_min > 1e-12 * sigma_max); throws std::invalid_argument otherwise.
Matrix polar(const Matrix& a, const SvdOptions& opts = {});

struct SpectralNorm {
    double value = 0.0;
    Vector vec;           // converged direction (unit norm unless input is zero)
    bool degenerate = false;  // power iteration saw a sign-ambiguous pair
};

// Largest |eigenvalue| of a symmetric matrix. iters >= 1 runs power iteration
// from a seeded start; iters == 0 computes the exact value via full SVD (the
// test oracle). `warm` optionally supplies a start vector (training-time warm
// restart); it is ignored when its size does not match.
SpectralNorm spectral_norm_sym(const Matrix& s, int iters, std::uint64_t seed,
                               const Vector* warm = nullptr);

// ||W_hat^T W_hat - I||_F where W_hat is `w` oriented so rows >= cols.
double frobenius_distance_to_identity(const Matrix& w);

// Orients a weight view for the orthogonality machinery: transpose when
// rows < cols.
inline Matrix oriented(const Matrix& w) {
    return w.rows() >= w.cols() ? w : Matrix(w.transpose());
}

}  // namespace linalg
}  // namespace taotf
