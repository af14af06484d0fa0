#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "taotf/stiefel.hpp"

namespace taotf::pdoi {

struct PdoiConfig {
    double gamma = 1.0;
    int max_iters = 50;
    double rel_tol = 1e-6;
    int gradient_sign = +1;  // +1 follows the update as printed; -1 descends
    int calib_batch = 256;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PdoiTrace {
    int iterates_used = 0;
    double final_delta = 0.0;            // ||X_k - X_{k-1}||_F / sqrt(p)
    std::vector<double> objective_values;  // per iterate, when an objective is given
};

using GradFn = std::function<Matrix(const Matrix&)>;
using ObjFn = std::function<double(const Matrix&)>;

// One update: polar(gradient_sign * g + gamma * x).
stiefel::StiefelPoint pdoi_step(const Matrix& x, const Matrix& g, const PdoiConfig& cfg);

// Iterates pdoi_step from x0 until the relative Frobenius change drops below
// rel_tol or max_iters is reached. Every iterate is on the manifold; x0 itself
// may be off-manifold (the first step projects it). obj_fn, when given, is
// evaluated at each iterate and recorded in the trace.
std::pair<stiefel::StiefelPoint, PdoiTrace> pdoi_init(const Matrix& x0, const GradFn& grad_fn,
                                                      const PdoiConfig& cfg,
                                                      const ObjFn& obj_fn = nullptr);

}  // namespace taotf::pdoi
