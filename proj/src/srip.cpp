#include "taotf/srip.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace taotf::srip {

namespace {

Matrix gram_deviation(const Matrix& wh) {
    const Eigen::Index p = wh.cols();
    Matrix s = wh.transpose() * wh - Matrix::Identity(p, p);
    // Enforce exact symmetry; floating-point products drift slightly.
    return 0.5 * (s + s.transpose());
}

linalg::SpectralNorm dominant(const Matrix& s, const SripConfig& cfg, SripState* state) {
    const int iters = cfg.exact_mode ? 0 : cfg.power_iters;
    const Vector* warm = (state && state->warm.size() == s.rows()) ? &state->warm : nullptr;
    linalg::SpectralNorm sn = linalg::spectral_norm_sym(s, iters, cfg.seed, warm);
    if (state) {
        state->warm = sn.vec;
        state->degenerate = sn.degenerate;
    }
    return sn;
}

}  // namespace

void SripConfig::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("SripConfig: lambda must be >= 0");
    if (!exact_mode && power_iters < 1)
        throw std::invalid_argument("SripConfig: power_iters must be >= 1");
}

double srip_penalty(const Matrix& w, const SripConfig& cfg, SripState* state) {
    cfg.validate();
    return dominant(gram_deviation(linalg::oriented(w)), cfg, state).value;
}

Matrix srip_grad(const Matrix& w, const SripConfig& cfg, SripState* state) {
    cfg.validate();
    const bool transposed = w.rows() < w.cols();
    const Matrix wh = linalg::oriented(w);
    const Matrix s = gram_deviation(wh);

    linalg::SpectralNorm sn = dominant(s, cfg, state);
    const Vector& u = sn.vec;
    const double lam = u.dot(s * u);
    // at a (near-)orthonormal point every eigenvalue of S is ~0: the penalty
    // is at its minimum and the subgradient collapses to zero
    const double sign = std::abs(lam) <= 1e-9 ? 0.0 : (lam > 0.0 ? 1.0 : -1.0);

    Matrix g = sign * 2.0 * (wh * u) * u.transpose();
    return transposed ? Matrix(g.transpose()) : g;
}

double rip_constant(const Matrix& w) {
    linalg::SvdResult dec = linalg::svd(linalg::oriented(w));
    const double smax = dec.sigma(0);
    const double smin = dec.sigma(dec.sigma.size() - 1);
    return std::max({smax * smax - 1.0, 1.0 - smin * smin, 0.0});
}

}  // namespace taotf::srip
