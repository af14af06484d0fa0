#pragma once

#include <cstdint>

#include "taotf/linalg.hpp"

namespace taotf::srip {

struct SripConfig {
    double lambda = 1e-3;
    int power_iters = 4;
    bool exact_mode = false;  // full SVD instead of power iteration (the oracle)
    std::uint64_t seed = 0;

    void validate() const;
};

// Warm-started power-iteration direction, one per layer per trainer.
struct SripState {
    Vector warm;
    bool degenerate = false;  // last gradient saw a near-degenerate spectrum
};

// sigma(W_hat^T W_hat - I), the spectral norm of the Gram deviation of the
// oriented weight view. Zero iff the view is column-orthonormal (exact mode).
double srip_penalty(const Matrix& w, const SripConfig& cfg, SripState* state = nullptr);

// Gradient of srip_penalty w.r.t. w, treating the dominant eigenvector of the
// Gram deviation as constant: s * 2 * W_hat * u * u^T mapped back through the
// orientation transpose, s the sign of the dominant eigenvalue.
Matrix srip_grad(const Matrix& w, const SripConfig& cfg, SripState* state = nullptr);

// Restricted isometry constant delta = max(sigma_max^2 - 1, 1 - sigma_min^2)
// of the oriented view; 0 iff all singular values equal 1.
double rip_constant(const Matrix& w);

}  // namespace taotf::srip
