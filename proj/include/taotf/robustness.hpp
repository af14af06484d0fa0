#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taotf/nn.hpp"

namespace taotf::robustness {

enum class CorruptionKind {
    GaussianNoise,
    MultiplicativeNoise,
    GaussianBlur,
    Brightness,
    Saturation,
    Rotation,
};

CorruptionKind corruption_kind_from_string(const std::string& name);
std::string to_string(CorruptionKind kind);

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::GaussianNoise;
    double severity = 0.0;  // 0 is the identity for every kind
    std::uint64_t seed = 0;
};

// Default severities, calibrated so the plain baseline loses a visible chunk
// of accuracy on the synthetic benchmark.
std::vector<CorruptionSpec> default_corruptions(std::uint64_t seed);

// Applies one corruption to a single-channel image in [0,1]^(h x w).
// Deterministic per (spec.seed); outputs stay in [0,1].
Matrix corrupt(const Matrix& x, const CorruptionSpec& spec);

struct Dataset {
    int h = 0, w = 0, n_classes = 0;
    std::vector<Matrix> images;  // h x w, values in [0,1]
    std::vector<int> labels;
    std::vector<int> train_idx, val_idx, test_idx;

    int size() const { return static_cast<int>(images.size()); }
};

// Seeded 0.70/0.10/0.20 shuffle split.
void make_splits(Dataset& data, std::uint64_t seed);

// Class-conditional oriented-bar images with background noise; a pixel
// template classifier separates the classes at > 95% accuracy.
Dataset synthesize_dataset(int n, int h, int w, int n_classes, std::uint64_t seed);

// Nearest-template baseline over class-mean images from the train split; the
// build-time sanity oracle for synthesize_dataset.
double template_classifier_accuracy(const Dataset& data);

// Flattens the samples at `indices` into a batch matrix (row per sample).
Matrix batch_from(const Dataset& data, const std::vector<int>& indices);
std::vector<int> labels_from(const Dataset& data, const std::vector<int>& indices);

struct RobustnessRow {
    std::string kind;
    double severity = 0.0;
    double accuracy = 0.0;
};

struct RobustnessTable {
    double clean_accuracy = 0.0;
    std::vector<RobustnessRow> rows;
};

// Test-split accuracy per corruption spec, plus clean accuracy. Per-sample
// corruption streams are derived as spec.seed xor sample index.
RobustnessTable robustness_table(const nn::Network& net, const Dataset& data,
                                 const std::vector<CorruptionSpec>& specs);

// Max over sampled (and slightly perturbed) pairs of
// ||f(x1) - f(x2)|| / ||x1 - x2|| at the logits; a lower bound on the true
// Lipschitz constant.
double empirical_lipschitz(const nn::Network& net, const Matrix& samples, int n_pairs,
                           std::uint64_t seed);

struct LayerSpectrum {
    int layer_index = 0;
    double sigma_max = 0.0;
    double sigma_min = 0.0;
    double orth_error = 0.0;  // ||W_hat^T W_hat - I||_F
};

std::vector<LayerSpectrum> spectrum_report(const nn::Network& net);

// On-disk dataset format: "TAOTF-DS v1", a counts line, labels as decimal
// lines, then pixels as little-endian 64-bit floats. Splits are not stored;
// call make_splits after loading.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

// IDX-format loader (MNIST-style magics 0x803 / 0x801), pixels normalized to
// [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace taotf::robustness
