#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "taotf/bench.hpp"
#include "taotf/linalg.hpp"
#include "taotf/nn.hpp"
#include "taotf/robustness.hpp"
#include "taotf/stiefel.hpp"
#include "taotf/trainer.hpp"

namespace fs = std::filesystem;
using namespace taotf;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw bench::ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

bench::ExperimentConfig load_config(const std::string& path, std::string* text_out) {
    const std::string text = read_file(path);
    if (text_out) *text_out = text;
    return bench::parse_config_text(text, path);
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_manifest(const bench::ExperimentConfig& cfg, const std::string& config_text,
                    const std::string& path) {
    bench::write_file_atomic(path, bench::manifest_json(cfg, config_text));
}

int cmd_gen_data(const std::string& out, int n, int h, int w, int classes,
                 std::uint64_t seed) {
    robustness::Dataset data = robustness::synthesize_dataset(n, h, w, classes, seed);
    robustness::save_dataset(data, out);
    std::cout << "wrote " << out << " (" << data.size() << " samples, "
              << "template accuracy " << robustness::template_classifier_accuracy(data) << ")\n";
    return 0;
}

int cmd_corrupt(const std::string& in, const std::string& out, const std::string& kind,
                double severity, std::uint64_t seed) {
    robustness::Dataset data = robustness::load_dataset(in);
    robustness::CorruptionSpec spec{robustness::corruption_kind_from_string(kind), severity, seed};
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        robustness::CorruptionSpec per = spec;
        per.seed = seed ^ static_cast<std::uint64_t>(i);
        data.images[i] = robustness::corrupt(data.images[i], per);
    }
    robustness::save_dataset(data, out);
    std::cout << "wrote " << out << '\n';
    return 0;
}

int cmd_init(const std::string& config_path) {
    std::string config_text;
    bench::ExperimentConfig cfg = load_config(config_path, &config_text);
    ensure_dir(cfg.output_dir);

    robustness::Dataset data = bench::load_or_synthesize(cfg.dataset);
    nn::Network net =
        nn::make_network(cfg.model, {1, data.h, data.w}, data.n_classes, cfg.train.seed);
    trainer::CalibrationBatch batch =
        trainer::calibration_batch(data, cfg.train.pdoi.calib_batch, cfg.train.pdoi.seed);
    auto traces = trainer::pdoi_init_network(net, batch, cfg.train.pdoi, cfg.train.layer_optout);

    const std::string ckpt = cfg.output_dir + "/init.ckpt";
    nn::save_checkpoint(net, ckpt);

    nlohmann::json j;
    j["traces"] = nlohmann::json::array();
    for (const auto& trace : traces)
        j["traces"].push_back({{"iterates_used", trace.iterates_used},
                               {"final_delta", trace.final_delta},
                               {"objective_values", trace.objective_values}});
    bench::write_file_atomic(cfg.output_dir + "/pdoi_trace.json", j.dump(2) + "\n");
    write_manifest(cfg, config_text, cfg.output_dir + "/manifest.json");
    std::cout << "wrote " << ckpt << '\n';
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& mode_override,
              std::int64_t seed_override) {
    std::string config_text;
    bench::ExperimentConfig cfg = load_config(config_path, &config_text);
    if (!mode_override.empty()) cfg.train.mode = trainer::mode_from_string(mode_override);
    if (seed_override >= 0) {
        cfg.train.seed = static_cast<std::uint64_t>(seed_override);
        cfg.train.srip.seed = cfg.train.seed;
        cfg.train.pdoi.seed = cfg.train.seed;
    }
    ensure_dir(cfg.output_dir);

    robustness::Dataset data = bench::load_or_synthesize(cfg.dataset);
    nn::Network net =
        nn::make_network(cfg.model, {1, data.h, data.w}, data.n_classes, cfg.train.seed);
    trainer::MetricsLog log = trainer::train(net, data, cfg.train);

    robustness::RobustnessTable table = robustness::robustness_table(net, data, cfg.corruptions);
    log.clean_test_accuracy = table.clean_accuracy;
    log.corruptions = table.rows;

    nn::save_checkpoint(net, cfg.output_dir + "/model.ckpt");
    trainer::write_metrics_csv(log, cfg.output_dir + "/metrics.csv");
    trainer::write_summary_json(log, cfg.output_dir + "/summary.json");
    write_manifest(cfg, config_text, cfg.output_dir + "/manifest.json");
    std::cout << "final val accuracy "
              << (log.epochs.empty() ? 0.0 : log.epochs.back().val_accuracy)
              << ", clean test accuracy " << table.clean_accuracy << '\n';
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_path,
             std::uint64_t split_seed, const std::string& out_json) {
    nn::Network net = nn::load_checkpoint(checkpoint);
    robustness::Dataset data = robustness::load_dataset(dataset_path);
    robustness::make_splits(data, split_seed ^ 0x9E3779B97F4A7C15ULL);

    trainer::EvalResult val = trainer::evaluate(net, robustness::batch_from(data, data.val_idx),
                                                robustness::labels_from(data, data.val_idx));
    trainer::EvalResult test = trainer::evaluate(net, robustness::batch_from(data, data.test_idx),
                                                 robustness::labels_from(data, data.test_idx));
    std::cout << "val accuracy " << val.accuracy << " loss " << val.mean_loss << '\n';
    std::cout << "test accuracy " << test.accuracy << " loss " << test.mean_loss << '\n';
    if (!out_json.empty()) {
        nlohmann::json j = {{"val_accuracy", val.accuracy},
                            {"val_loss", val.mean_loss},
                            {"test_accuracy", test.accuracy},
                            {"test_loss", test.mean_loss}};
        bench::write_file_atomic(out_json, j.dump(2) + "\n");
    }
    return 0;
}

int cmd_bench(const std::string& config_path) {
    std::string config_text;
    bench::ExperimentConfig cfg = load_config(config_path, &config_text);
    ensure_dir(cfg.output_dir);

    bench::BenchResult result = bench::run_bench(cfg);
    bench::write_file_atomic(cfg.output_dir + "/bench.csv", bench::bench_csv(result));
    write_manifest(cfg, config_text, cfg.output_dir + "/manifest.json");
    std::cout << "wrote " << cfg.output_dir << "/bench.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TAOTF experiment runner"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "synthesize a dataset to disk");
    std::string gen_out = "dataset.bin";
    int gen_n = 2000, gen_h = 16, gen_w = 16, gen_classes = 4;
    std::uint64_t gen_seed = 1;
    gen->add_option("--out", gen_out, "output path");
    gen->add_option("--n", gen_n, "sample count");
    gen->add_option("--height", gen_h, "image height");
    gen->add_option("--width", gen_w, "image width");
    gen->add_option("--classes", gen_classes, "class count");
    gen->add_option("--seed", gen_seed, "generator seed");

    // corrupt
    auto* cor = app.add_subcommand("corrupt", "corrupt a dataset to disk");
    std::string cor_in, cor_out, cor_kind = "gaussian_noise";
    double cor_sev = 0.3;
    std::uint64_t cor_seed = 0;
    cor->add_option("--in", cor_in, "input dataset")->required();
    cor->add_option("--out", cor_out, "output dataset")->required();
    cor->add_option("--kind", cor_kind, "corruption kind");
    cor->add_option("--severity", cor_sev, "corruption severity");
    cor->add_option("--seed", cor_seed, "corruption seed");

    // init / train / bench share a config file
    std::string init_config, train_config, bench_config;
    auto* init = app.add_subcommand("init", "run PDOI only, emit checkpoint + trace");
    init->add_option("--config", init_config, "experiment config")->required();

    auto* train = app.add_subcommand("train", "train one model");
    std::string train_mode;
    std::int64_t train_seed = -1;
    train->add_option("--config", train_config, "experiment config")->required();
    train->add_option("--mode", train_mode, "override train mode");
    train->add_option("--seed", train_seed, "override seed");

    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_json;
    std::uint64_t eval_seed = 1;
    evalc->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    evalc->add_option("--data", eval_data, "dataset path")->required();
    evalc->add_option("--seed", eval_seed, "split seed (must match training)");
    evalc->add_option("--out-json", eval_json, "optional JSON output");

    auto* benchc = app.add_subcommand("bench", "full multi-seed ablation grid");
    benchc->add_option("--config", bench_config, "experiment config")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_n, gen_h, gen_w, gen_classes, gen_seed);
        if (cor->parsed()) return cmd_corrupt(cor_in, cor_out, cor_kind, cor_sev, cor_seed);
        if (init->parsed()) return cmd_init(init_config);
        if (train->parsed()) return cmd_train(train_config, train_mode, train_seed);
        if (evalc->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_seed, eval_json);
        if (benchc->parsed()) return cmd_bench(bench_config);
    } catch (const bench::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const trainer::DivergenceError& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
