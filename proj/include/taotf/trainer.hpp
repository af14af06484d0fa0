#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "taotf/nn.hpp"
#include "taotf/pdoi.hpp"
#include "taotf/robustness.hpp"
#include "taotf/srip.hpp"

namespace taotf::trainer {

enum class Mode { Plain, SripOnly, OrthInitOnly, Hard, Taotf };

Mode mode_from_string(const std::string& name);
std::string to_string(Mode mode);

struct TrainConfig {
    Mode mode = Mode::Plain;
    double lr = 3e-4;  // desk-scale default; 3e-5 is the full-scale reference preset
    double weight_decay = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int epochs = 30;
    int batch_size = 8;
    double label_smoothing = 0.0;
    srip::SripConfig srip;
    pdoi::PdoiConfig pdoi;
    std::uint64_t seed = 0;
    std::set<int> layer_optout;  // layer indices excluded from orthogonality machinery

    bool uses_srip() const { return mode == Mode::SripOnly || mode == Mode::Taotf; }
    void validate() const;
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;  // task + lambda * penalty
    double task_loss = 0.0;
    double srip_loss = 0.0;  // sum of per-layer penalties
    double val_accuracy = 0.0;
    std::vector<double> orth_error;  // per weighted layer
    std::vector<double> sigma_max;
    std::vector<double> sigma_min;
};

struct MetricsLog {
    std::vector<EpochRow> epochs;
    double clean_test_accuracy = -1.0;  // filled by the final evaluation block
    std::vector<robustness::RobustnessRow> corruptions;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Per-tensor Adam state; lazily sized on first step.
struct AdamState {
    Eigen::ArrayXXd m, v;
    int t = 0;
};

// Standard Adam with bias correction and decoupled weight decay applied after
// the adaptive step. Deterministic.
template <typename Derived>
void adam_step(Eigen::MatrixBase<Derived>& param,
               const Eigen::MatrixBase<Derived>& grad, AdamState& st,
               const TrainConfig& cfg) {
    if (st.m.size() == 0) {
        st.m = Eigen::ArrayXXd::Zero(param.rows(), param.cols());
        st.v = Eigen::ArrayXXd::Zero(param.rows(), param.cols());
    }
    ++st.t;
    st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad.array();
    st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad.array().square();
    const double mc = 1.0 - std::pow(cfg.beta1, st.t);
    const double vc = 1.0 - std::pow(cfg.beta2, st.t);
    param.array() -= cfg.lr * (st.m / mc) / ((st.v / vc).sqrt() + cfg.eps);
    param.array() -= cfg.lr * cfg.weight_decay * param.array();
}

struct CalibrationBatch {
    Matrix inputs;
    std::vector<int> labels;
};

// Extracts the fixed seeded calibration batch PDOI evaluates its gradients on.
CalibrationBatch calibration_batch(const robustness::Dataset& data, int max_samples,
                                   std::uint64_t seed);

// Stage 1 over a whole network: pdoi_init per weight view in forward order,
// recomputing the calibration gradient after each earlier layer is updated.
// Biases are untouched. Returns one trace per initialized layer.
std::vector<pdoi::PdoiTrace> pdoi_init_network(nn::Network& net, const CalibrationBatch& batch,
                                               const pdoi::PdoiConfig& cfg,
                                               const std::set<int>& layer_optout = {});

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// Top-1 accuracy (argmax ties break to the lowest index) and mean loss.
EvalResult evaluate(const nn::Network& net, const Matrix& batch, const std::vector<int>& labels);

// Trains `net` in place per cfg.mode and returns the per-epoch log. Throws
// DivergenceError when the train loss exceeds 10x its initial value for three
// consecutive epochs.
MetricsLog train(nn::Network& net, const robustness::Dataset& data, const TrainConfig& cfg);

// CSV: header row then one row per epoch; spectra flattened per layer.
std::string metrics_csv(const MetricsLog& log);
void write_metrics_csv(const MetricsLog& log, const std::string& path);

// JSON summary of the final evaluation block (clean + per-corruption rows).
std::string summary_json(const MetricsLog& log);
void write_summary_json(const MetricsLog& log, const std::string& path);

}  // namespace taotf::trainer
