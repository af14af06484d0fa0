#include "taotf/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "taotf/rng.hpp"
#include "taotf/stiefel.hpp"

namespace taotf::trainer {

Mode mode_from_string(const std::string& name) {
    if (name == "plain") return Mode::Plain;
    if (name == "srip_only") return Mode::SripOnly;
    if (name == "orth_init_only") return Mode::OrthInitOnly;
    if (name == "hard") return Mode::Hard;
    if (name == "taotf") return Mode::Taotf;
    throw std::invalid_argument("unknown train mode '" + name + "'");
}

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::Plain: return "plain";
        case Mode::SripOnly: return "srip_only";
        case Mode::OrthInitOnly: return "orth_init_only";
        case Mode::Hard: return "hard";
        case Mode::Taotf: return "taotf";
    }
    throw std::invalid_argument("unknown train mode");
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
        throw std::invalid_argument("TrainConfig: label_smoothing must be in [0, 1)");
    if (uses_srip()) srip.validate();
}

CalibrationBatch calibration_batch(const robustness::Dataset& data, int max_samples,
                                   std::uint64_t seed) {
    std::vector<int> pool = data.train_idx;
    CounterRng rng(seed);
    for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i)
        std::swap(pool[i], pool[rng.next_below(static_cast<std::uint64_t>(i + 1))]);
    if (static_cast<int>(pool.size()) > max_samples) pool.resize(max_samples);
    return {robustness::batch_from(data, pool), robustness::labels_from(data, pool)};
}

std::vector<pdoi::PdoiTrace> pdoi_init_network(nn::Network& net, const CalibrationBatch& batch,
                                               const pdoi::PdoiConfig& cfg,
                                               const std::set<int>& layer_optout) {
    std::vector<pdoi::PdoiTrace> traces;
    for (int li : net.weighted_layer_indices()) {
        if (layer_optout.count(li)) continue;
        nn::Layer& layer = net.layers[li];
        const bool transposed = layer.weight.rows() < layer.weight.cols();

        auto put = [&](const Matrix& x) {
            layer.weight = transposed ? Matrix(x.transpose()) : x;
        };
        auto grad_fn = [&](const Matrix& x) -> Matrix {
            put(x);
            nn::Cache cache;
            nn::forward(net, batch.inputs, &cache);
            auto [loss, grads] = nn::backward(net, cache, batch.labels);
            (void)loss;
            return transposed ? Matrix(grads.weight[li].transpose()) : grads.weight[li];
        };
        auto obj_fn = [&](const Matrix& x) -> double {
            put(x);
            return nn::softmax_cross_entropy(nn::forward(net, batch.inputs), batch.labels);
        };

        const Matrix x0 = linalg::oriented(layer.weight);
        auto [point, trace] = pdoi::pdoi_init(x0, grad_fn, cfg, obj_fn);
        put(point.mat());
        traces.push_back(std::move(trace));
    }
    return traces;
}

EvalResult evaluate(const nn::Network& net, const Matrix& batch, const std::vector<int>& labels) {
    if (batch.rows() == 0) throw std::invalid_argument("evaluate: empty split");
    const Matrix logits = nn::forward(net, batch);
    int hits = 0;
    for (Eigen::Index s = 0; s < logits.rows(); ++s) {
        int best = 0;
        for (int j = 1; j < logits.cols(); ++j)
            if (logits(s, j) > logits(s, best)) best = j;
        if (best == labels[s]) ++hits;
    }
    return {static_cast<double>(hits) / static_cast<double>(logits.rows()),
            nn::softmax_cross_entropy(logits, labels)};
}

MetricsLog train(nn::Network& net, const robustness::Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    const double lambda = cfg.uses_srip() ? cfg.srip.lambda : 0.0;
    const bool uses_pdoi = cfg.mode == Mode::Taotf;

    // Stage 1 / initialization per mode.
    if (cfg.mode == Mode::OrthInitOnly || cfg.mode == Mode::Hard) {
        for (int li : net.weighted_layer_indices()) {
            if (cfg.layer_optout.count(li)) continue;
            nn::Layer& layer = net.layers[li];
            const bool transposed = layer.weight.rows() < layer.weight.cols();
            const Matrix q = linalg::polar(linalg::oriented(layer.weight));
            layer.weight = transposed ? Matrix(q.transpose()) : q;
        }
    } else if (uses_pdoi && cfg.pdoi.max_iters >= 1) {
        pdoi_init_network(net, calibration_batch(data, cfg.pdoi.calib_batch, cfg.pdoi.seed),
                          cfg.pdoi, cfg.layer_optout);
    }

    const std::vector<int> widx = net.weighted_layer_indices();
    std::vector<srip::SripConfig> layer_srip(widx.size(), cfg.srip);
    std::vector<srip::SripState> srip_states(widx.size());
    for (std::size_t k = 0; k < widx.size(); ++k)
        layer_srip[k].seed = CounterRng::at(cfg.srip.seed, k);
    std::vector<AdamState> wstate(widx.size()), bstate(widx.size());

    const Matrix val_batch = robustness::batch_from(data, data.val_idx);
    const std::vector<int> val_labels = robustness::labels_from(data, data.val_idx);

    MetricsLog log;
    // divergence reference: full loss of the untrained network on the train split
    double initial_loss = 0.0;
    if (cfg.epochs > 0 && !data.train_idx.empty()) {
        initial_loss = evaluate(net, robustness::batch_from(data, data.train_idx),
                                robustness::labels_from(data, data.train_idx))
                           .mean_loss;
        if (lambda > 0.0)
            for (std::size_t k = 0; k < widx.size(); ++k) {
                if (cfg.layer_optout.count(widx[k])) continue;
                srip::SripConfig probe = layer_srip[k];
                probe.exact_mode = true;
                initial_loss += lambda * srip::srip_penalty(nn::weight_view(net.layers[widx[k]]),
                                                            probe);
            }
    }
    int divergent_epochs = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = data.train_idx;
        CounterRng shuffle_rng(CounterRng::at(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.next_below(static_cast<std::uint64_t>(i + 1))]);

        double sum_task = 0.0, sum_pen = 0.0;
        int n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::vector<int> idx(order.begin() + start, order.begin() + end);
            const Matrix batch = robustness::batch_from(data, idx);
            const std::vector<int> labels = robustness::labels_from(data, idx);

            nn::Cache cache;
            nn::forward(net, batch, &cache);
            auto [task_loss, grads] = nn::backward(net, cache, labels, cfg.label_smoothing);

            double pen_sum = 0.0;
            if (lambda > 0.0) {
                for (std::size_t k = 0; k < widx.size(); ++k) {
                    const int li = widx[k];
                    if (cfg.layer_optout.count(li)) continue;
                    const Matrix& view = nn::weight_view(net.layers[li]);
                    pen_sum += srip::srip_penalty(view, layer_srip[k], &srip_states[k]);
                    grads.weight[li] += lambda * srip::srip_grad(view, layer_srip[k],
                                                                 &srip_states[k]);
                }
            }

            for (std::size_t k = 0; k < widx.size(); ++k) {
                const int li = widx[k];
                nn::Layer& layer = net.layers[li];
                if (cfg.mode == Mode::Hard && !cfg.layer_optout.count(li)) {
                    // manifold update for the view; no weight decay here
                    const bool transposed = layer.weight.rows() < layer.weight.cols();
                    const Matrix x = linalg::oriented(layer.weight);
                    const Matrix g = transposed ? Matrix(grads.weight[li].transpose())
                                                : grads.weight[li];
                    const Matrix xn =
                        stiefel::riemannian_step(stiefel::StiefelPoint(x, 1e-6), g, cfg.lr).mat();
                    layer.weight = transposed ? Matrix(xn.transpose()) : xn;
                } else {
                    adam_step(layer.weight, grads.weight[li], wstate[k], cfg);
                }
                adam_step(layer.bias, grads.bias[li], bstate[k], cfg);
            }

            sum_task += task_loss;
            sum_pen += pen_sum;
            ++n_batches;
        }

        EpochRow row;
        row.epoch = epoch;
        row.task_loss = sum_task / n_batches;
        row.srip_loss = sum_pen / n_batches;
        row.train_loss = row.task_loss + lambda * row.srip_loss;
        row.val_accuracy = evaluate(net, val_batch, val_labels).accuracy;
        for (const auto& spec : robustness::spectrum_report(net)) {
            row.orth_error.push_back(spec.orth_error);
            row.sigma_max.push_back(spec.sigma_max);
            row.sigma_min.push_back(spec.sigma_min);
        }
        log.epochs.push_back(std::move(row));

        const double epoch_loss = log.epochs.back().train_loss;
        if (!std::isfinite(epoch_loss) || epoch_loss > 10.0 * initial_loss) {
            if (++divergent_epochs >= 3)
                throw DivergenceError("train: loss exceeded 10x its initial value for 3 epochs");
        } else {
            divergent_epochs = 0;
        }
    }
    return log;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open " + tmp);
        os << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

std::string metrics_csv(const MetricsLog& log) {
    std::string out = "epoch,train_loss,task_loss,srip_loss,val_accuracy";
    const std::size_t n_layers = log.epochs.empty() ? 0 : log.epochs.front().orth_error.size();
    for (std::size_t k = 0; k < n_layers; ++k)
        out += ",orth_error_" + std::to_string(k) + ",sigma_max_" + std::to_string(k) +
               ",sigma_min_" + std::to_string(k);
    out += '\n';
    for (const EpochRow& row : log.epochs) {
        out += std::to_string(row.epoch) + ',' + fmt(row.train_loss) + ',' + fmt(row.task_loss) +
               ',' + fmt(row.srip_loss) + ',' + fmt(row.val_accuracy);
        for (std::size_t k = 0; k < n_layers; ++k)
            out += ',' + fmt(row.orth_error[k]) + ',' + fmt(row.sigma_max[k]) + ',' +
                   fmt(row.sigma_min[k]);
        out += '\n';
    }
    return out;
}

void write_metrics_csv(const MetricsLog& log, const std::string& path) {
    write_atomic(path, metrics_csv(log));
}

std::string summary_json(const MetricsLog& log) {
    nlohmann::json j;
    j["clean_test_accuracy"] = log.clean_test_accuracy;
    j["corruptions"] = nlohmann::json::array();
    for (const auto& row : log.corruptions)
        j["corruptions"].push_back(
            {{"kind", row.kind}, {"severity", row.severity}, {"accuracy", row.accuracy}});
    if (!log.epochs.empty()) {
        j["final_epoch"] = {{"epoch", log.epochs.back().epoch},
                            {"train_loss", log.epochs.back().train_loss},
                            {"val_accuracy", log.epochs.back().val_accuracy}};
    }
    return j.dump(2) + "\n";
}

void write_summary_json(const MetricsLog& log, const std::string& path) {
    write_atomic(path, summary_json(log));
}

}  // namespace taotf::trainer
