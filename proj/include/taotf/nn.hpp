#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "taotf/linalg.hpp"

namespace taotf::nn {

struct Shape {
    int c = 1, h = 1, w = 1;
    int size() const { return c * h * w; }
    bool operator==(const Shape&) const = default;
};

enum class LayerKind { Dense, Conv2d, Relu };

// Activations flow between layers as batch x features matrices; conv features
// are laid out channel-major: index = ch * (h * w) + y * w + x.
struct Layer {
    LayerKind kind = LayerKind::Relu;

    // Dense: weight is out x in. Conv2d: weight is the flattened kernel,
    // out_ch x (in_ch * kh * kw) -- this matrix IS the orthogonality view.
    Matrix weight;
    Vector bias;
    int in_ch = 0, out_ch = 0, kh = 0, kw = 0;

    Shape in_shape, out_shape;  // filled by finalize()

    bool has_weight() const { return kind != LayerKind::Relu; }
};

Layer dense_layer(int out, int in);
Layer conv2d_layer(int out_ch, int in_ch, int kh, int kw);
Layer relu_layer();

// The matrix exposed to the orthogonality machinery. Writable; throws for
// layers without weights.
Matrix& weight_view(Layer& layer);
const Matrix& weight_view(const Layer& layer);

struct Network {
    std::vector<Layer> layers;
    Shape input_shape;
    int n_classes = 0;

    std::vector<int> weighted_layer_indices() const;
};

// Chains layer shapes from input_shape and checks consistency; call after any
// structural change.
void finalize(Network& net);

// Seeded He-initialized reference architectures.
Network make_mlp3(Shape input, int n_classes, std::uint64_t seed);
Network make_conv_s(Shape input, int n_classes, std::uint64_t seed);
Network make_network(const std::string& model, Shape input, int n_classes, std::uint64_t seed);

struct Cache {
    std::vector<Matrix> inputs;   // activation entering each layer
    std::vector<Matrix> patches;  // im2col matrix per conv layer, else empty
    Matrix logits;
};

// batch: batch x input_shape.size(). Returns logits (batch x n_classes).
Matrix forward(const Network& net, const Matrix& batch, Cache* cache = nullptr);

struct Gradients {
    std::vector<Matrix> weight;  // empty matrix for weightless layers
    std::vector<Vector> bias;
};

// Mean softmax cross-entropy over the cached batch plus gradients for every
// parameter. labels are class indices in [0, n_classes); label_smoothing
// mixes the one-hot targets with the uniform distribution.
std::pair<double, Gradients> backward(const Network& net, const Cache& cache,
                                      const std::vector<int>& labels,
                                      double label_smoothing = 0.0);

double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                             double label_smoothing = 0.0);

// Checkpoint I/O: magic "TAOTF1\n", a shape line, then one record per layer
// (kind tag + shape integers on a text line, parameters as little-endian
// 64-bit floats in row-major order).
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace taotf::nn
