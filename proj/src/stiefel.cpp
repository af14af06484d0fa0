#include "taotf/stiefel.hpp"

#include <stdexcept>

#include "taotf/rng.hpp"

namespace taotf::stiefel {

StiefelPoint::StiefelPoint(Matrix m, double tol) : mat_(std::move(m)), tol_(tol) {
    if (mat_.rows() < mat_.cols())
        throw std::invalid_argument("StiefelPoint: expected rows >= cols");
    if (!is_on_manifold(mat_, tol_))
        throw std::invalid_argument("StiefelPoint: matrix is not column-orthonormal");
}

bool is_on_manifold(const Matrix& x, double tol) {
    if (x.rows() < x.cols())
        throw std::invalid_argument("is_on_manifold: expected rows >= cols");
    const Eigen::Index p = x.cols();
    return (x.transpose() * x - Matrix::Identity(p, p)).norm() <= tol;
}

StiefelPoint project(const Matrix& a) { return StiefelPoint(linalg::polar(a)); }

StiefelPoint random_point(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
    if (n < p || p < 1) throw std::invalid_argument("random_point: need n >= p >= 1");
    CounterRng rng(seed);
    Matrix g(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) g(i, j) = rng.next_normal();

    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(n, p);
    const Matrix r = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < p; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return StiefelPoint(std::move(q), 1e-10);
}

Matrix tangent_project(const StiefelPoint& x, const Matrix& g) {
    if (g.rows() != x.rows() || g.cols() != x.cols())
        throw std::invalid_argument("tangent_project: shape mismatch");
    const Matrix xtg = x.mat().transpose() * g;
    return g - x.mat() * (0.5 * (xtg + xtg.transpose()));
}

StiefelPoint riemannian_step(const StiefelPoint& x, const Matrix& g, double lr) {
    if (lr <= 0.0) throw std::invalid_argument("riemannian_step: lr must be positive");
    return project(x.mat() - lr * tangent_project(x, g));
}

}  // namespace taotf::stiefel
