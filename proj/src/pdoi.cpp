#include "taotf/pdoi.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace taotf::pdoi {

void PdoiConfig::validate() const {
    if (gamma <= 0.0) throw std::invalid_argument("PdoiConfig: gamma must be positive");
    if (max_iters < 1) throw std::invalid_argument("PdoiConfig: max_iters must be >= 1");
    if (rel_tol <= 0.0) throw std::invalid_argument("PdoiConfig: rel_tol must be positive");
    if (gradient_sign != 1 && gradient_sign != -1)
        throw std::invalid_argument("PdoiConfig: gradient_sign must be +1 or -1");
}

stiefel::StiefelPoint pdoi_step(const Matrix& x, const Matrix& g, const PdoiConfig& cfg) {
    cfg.validate();
    if (g.rows() != x.rows() || g.cols() != x.cols())
        throw std::invalid_argument("pdoi_step: shape mismatch");
    return stiefel::project(static_cast<double>(cfg.gradient_sign) * g + cfg.gamma * x);
}

std::pair<stiefel::StiefelPoint, PdoiTrace> pdoi_init(const Matrix& x0, const GradFn& grad_fn,
                                                      const PdoiConfig& cfg,
                                                      const ObjFn& obj_fn) {
    cfg.validate();
    const double sqrt_p = std::sqrt(static_cast<double>(x0.cols()));

    PdoiTrace trace;
    Matrix prev = x0;
    Matrix cur;
    for (int k = 1; k <= cfg.max_iters; ++k) {
        Matrix g;
        try {
            g = grad_fn(prev);
        } catch (const std::exception& e) {
            throw std::runtime_error("pdoi_init: gradient callback failed at iteration " +
                                     std::to_string(k) + ": " + e.what());
        }
        cur = pdoi_step(prev, g, cfg).mat();
        trace.iterates_used = k;
        trace.final_delta = (cur - prev).norm() / sqrt_p;
        if (obj_fn) trace.objective_values.push_back(obj_fn(cur));
        prev = cur;
        if (trace.final_delta < cfg.rel_tol) break;
    }
    return {stiefel::StiefelPoint(std::move(cur)), trace};
}

}  // namespace taotf::pdoi
