#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "taotf/robustness.hpp"
#include "taotf/trainer.hpp"

namespace taotf::bench {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetSpec {
    std::string path;  // existing TAOTF-DS file; empty -> synthesize
    int n = 2000, h = 16, w = 16, n_classes = 4;
    std::uint64_t seed = 1;
};

struct ExperimentConfig {
    std::string model = "mlp3";
    DatasetSpec dataset;
    trainer::TrainConfig train;
    std::vector<robustness::CorruptionSpec> corruptions;  // empty -> defaults
    std::string output_dir = ".";
    std::vector<std::uint64_t> seeds = {1};
    std::vector<std::string> modes;  // bench grid; empty -> all five modes
};

// Flat key=value config with [section] headers; '#' starts a comment.
// Throws ConfigError with line/field diagnostics.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
ExperimentConfig parse_config_file(const std::string& path);

robustness::Dataset load_or_synthesize(const DatasetSpec& spec);

struct BenchCell {
    std::string mode;
    std::uint64_t seed = 0;
    robustness::RobustnessTable table;
};

struct BenchResult {
    std::vector<std::string> kinds;  // corruption column order
    std::vector<BenchCell> cells;    // mode-major, seed within mode
};

// Runs the (mode, seed) ablation grid. Cells are independent and may run on
// up to TAOTF_THREADS worker threads; the result ordering is fixed either way.
BenchResult run_bench(const ExperimentConfig& cfg);

// Table-1-shaped CSV: mode,seed,clean,<one column per corruption kind>, with
// a per-mode mean row (seed column "mean").
std::string bench_csv(const BenchResult& result);

std::uint64_t fnv1a(const std::string& text);

// Records config hash, seeds, modes, and artifact version; replaying the
// recorded config reproduces every CSV byte-identically.
std::string manifest_json(const ExperimentConfig& cfg, const std::string& config_text);

void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace taotf::bench
