#include "taotf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "taotf/rng.hpp"

namespace taotf::linalg {

namespace {

void check_finite(const Matrix& a, const char* what) {
    if (!a.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

// Replaces the zero columns of u (marked by zero_cols) with an orthonormal
// completion of the nonzero ones.
void complete_basis(Matrix& u, const std::vector<int>& zero_cols) {
    const Eigen::Index n = u.rows();
    std::vector<int> filled;
    for (int j = 0; j < u.cols(); ++j) {
        if (std::find(zero_cols.begin(), zero_cols.end(), j) == zero_cols.end())
            filled.push_back(j);
    }
    for (int j : zero_cols) {
        Vector best;
        double best_norm = -1.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            Vector cand = Vector::Unit(n, k);
            for (int pass = 0; pass < 2; ++pass)
                for (int f : filled) cand -= u.col(f).dot(cand) * u.col(f);
            const double nrm = cand.norm();
            if (nrm > best_norm) {
                best_norm = nrm;
                best = cand;
            }
            if (nrm > 0.5) break;  // good enough, no need to scan further
        }
        u.col(j) = best / best_norm;
        filled.push_back(j);
    }
}

}  // namespace

SvdResult svd(const Matrix& a, const SvdOptions& opts) {
    check_finite(a, "svd");
    if (a.rows() < 1 || a.cols() < 1) throw std::invalid_argument("svd: empty matrix");

    if (a.rows() < a.cols()) {
        SvdResult t = svd(Matrix(a.transpose()), opts);
        return {t.v, t.sigma, t.u};
    }

    const Eigen::Index p = a.cols();
    Matrix b = a;
    Matrix v = Matrix::Identity(p, p);

    // One-sided Jacobi: rotate column pairs of b until all pairs are
    // orthogonal relative to their norms.
    bool converged = false;
    for (int sweep = 0; sweep < opts.max_sweeps && !converged; ++sweep) {
        converged = true;
        for (Eigen::Index i = 0; i + 1 < p; ++i) {
            for (Eigen::Index j = i + 1; j < p; ++j) {
                const double alpha = b.col(i).squaredNorm();
                const double beta = b.col(j).squaredNorm();
                const double gamma = b.col(i).dot(b.col(j));
                if (std::abs(gamma) <= opts.rel_tol * std::sqrt(alpha * beta)) continue;
                converged = false;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                const Vector bi = b.col(i);
                b.col(i) = c * bi - s * b.col(j);
                b.col(j) = s * bi + c * b.col(j);
                const Vector vi = v.col(i);
                v.col(i) = c * vi - s * v.col(j);
                v.col(j) = s * vi + c * v.col(j);
            }
        }
    }
    if (!converged) throw std::runtime_error("svd: Jacobi sweeps did not converge");

    Vector sigma(p);
    for (Eigen::Index j = 0; j < p; ++j) sigma(j) = b.col(j).norm();

    std::vector<Eigen::Index> order(p);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return sigma(x) > sigma(y); });

    SvdResult res;
    res.u.resize(a.rows(), p);
    res.v.resize(p, p);
    res.sigma.resize(p);
    std::vector<int> zero_cols;
    for (Eigen::Index j = 0; j < p; ++j) {
        const Eigen::Index src = order[j];
        res.sigma(j) = sigma(src);
        res.v.col(j) = v.col(src);
        if (sigma(src) > 0.0) {
            res.u.col(j) = b.col(src) / sigma(src);
        } else {
            res.u.col(j).setZero();
            zero_cols.push_back(static_cast<int>(j));
        }
    }
    if (!zero_cols.empty()) complete_basis(res.u, zero_cols);
    return res;
}

Matrix polar(const Matrix& a, const SvdOptions& opts) {
    if (a.rows() < a.cols())
        throw std::invalid_argument("polar: expected rows >= cols");
    SvdResult s = svd(a, opts);
    const double smax = s.sigma(0);
    if (s.sigma(s.sigma.size() - 1) <= 1e-12 * smax)
        throw std::invalid_argument("polar: rank-deficient input, polar factor not unique");
    return s.u * s.v.transpose();
}

SpectralNorm spectral_norm_sym(const Matrix& s, int iters, std::uint64_t seed,
                               const Vector* warm) {
    if (s.rows() != s.cols()) throw std::invalid_argument("spectral_norm_sym: not square");
    check_finite(s, "spectral_norm_sym");
    const double scale = s.cwiseAbs().maxCoeff();
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, scale))
        throw std::invalid_argument("spectral_norm_sym: not symmetric");

    const Eigen::Index n = s.rows();
    if (scale == 0.0) return {0.0, Vector::Unit(n, 0), false};

    if (iters == 0) {
        SvdResult dec = svd(s);
        const bool degenerate =
            dec.sigma.size() > 1 && dec.sigma(0) - dec.sigma(1) < 1e-10;
        return {dec.sigma(0), dec.u.col(0), degenerate};
    }

    auto run = [&](std::uint64_t sd, bool column_start) {
        Vector v;
        if (warm && warm->size() == n && warm->norm() > 0.0) {
            v = *warm / warm->norm();
        } else if (column_start) {
            // the largest column of s is naturally enriched in the dominant
            // eigenvector; immune to an unlucky random draw
            Eigen::Index best = 0;
            s.colwise().norm().maxCoeff(&best);
            v = s.col(best).normalized();
        } else {
            CounterRng rng(sd);
            v.resize(n);
            for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.next_normal();
            v.normalize();
        }
        // each iteration applies s twice (power iteration on s^2): converges
        // at the squared rate and is blind to the sign of +/- eigenvalue pairs
        for (int k = 0; k < iters; ++k) {
            Vector w = s * (s * v).eval();
            const double nw = w.norm();
            if (nw == 0.0) break;  // landed in the null space
            v = w / nw;
        }
        Vector w = s * v;
        SpectralNorm out;
        out.value = w.norm();
        out.vec = v;
        out.degenerate = std::abs(v.dot(w)) < (1.0 - 1e-3) * out.value;
        return out;
    };

    SpectralNorm first = run(seed, false);
    const bool cold = !(warm && warm->size() == n && warm->norm() > 0.0);
    // A cold random start can have near-zero overlap with the top eigenvector
    // and converge cleanly to the wrong one; a warm start only needs a second
    // opinion when the Rayleigh quotient stagnated. Either way keep the larger
    // of two independent estimates.
    if (!cold && !first.degenerate) return first;
    warm = nullptr;
    SpectralNorm second = run(seed + 1, true);
    return second.value > first.value ? second : first;
}

double frobenius_distance_to_identity(const Matrix& w) {
    const Matrix wh = oriented(w);
    const Eigen::Index p = wh.cols();
    return (wh.transpose() * wh - Matrix::Identity(p, p)).norm();
}

}  // namespace taotf::linalg
