#include "taotf/nn.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "taotf/rng.hpp"

namespace taotf::nn {

namespace {

void he_init(Layer& layer, int fan_in, std::uint64_t seed) {
    CounterRng rng(seed);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
            layer.weight(i, j) = std * rng.next_normal();
    layer.bias.setZero();
}

}  // namespace

Layer dense_layer(int out, int in) {
    Layer l;
    l.kind = LayerKind::Dense;
    l.weight = Matrix::Zero(out, in);
    l.bias = Vector::Zero(out);
    return l;
}

Layer conv2d_layer(int out_ch, int in_ch, int kh, int kw) {
    Layer l;
    l.kind = LayerKind::Conv2d;
    l.out_ch = out_ch;
    l.in_ch = in_ch;
    l.kh = kh;
    l.kw = kw;
    l.weight = Matrix::Zero(out_ch, in_ch * kh * kw);
    l.bias = Vector::Zero(out_ch);
    return l;
}

Layer relu_layer() { return Layer{}; }

Matrix& weight_view(Layer& layer) {
    if (!layer.has_weight()) throw std::invalid_argument("weight_view: layer has no weights");
    return layer.weight;
}

const Matrix& weight_view(const Layer& layer) {
    if (!layer.has_weight()) throw std::invalid_argument("weight_view: layer has no weights");
    return layer.weight;
}

std::vector<int> Network::weighted_layer_indices() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(layers.size()); ++i)
        if (layers[i].has_weight()) out.push_back(i);
    return out;
}

void finalize(Network& net) {
    Shape cur = net.input_shape;
    for (auto& layer : net.layers) {
        layer.in_shape = cur;
        switch (layer.kind) {
            case LayerKind::Dense:
                if (layer.weight.cols() != cur.size())
                    throw std::invalid_argument("finalize: dense input size mismatch");
                cur = {1, 1, static_cast<int>(layer.weight.rows())};
                break;
            case LayerKind::Conv2d: {
                if (layer.in_ch != cur.c)
                    throw std::invalid_argument("finalize: conv channel mismatch");
                const int oh = cur.h - layer.kh + 1;
                const int ow = cur.w - layer.kw + 1;
                if (oh < 1 || ow < 1)
                    throw std::invalid_argument("finalize: conv kernel larger than input");
                cur = {layer.out_ch, oh, ow};
                break;
            }
            case LayerKind::Relu:
                break;
        }
        layer.out_shape = cur;
    }
    if (cur.size() != net.n_classes)
        throw std::invalid_argument("finalize: output size != n_classes");
}

Network make_mlp3(Shape input, int n_classes, std::uint64_t seed) {
    Network net;
    net.input_shape = input;
    net.n_classes = n_classes;
    net.layers.push_back(dense_layer(128, input.size()));
    net.layers.push_back(relu_layer());
    net.layers.push_back(dense_layer(64, 128));
    net.layers.push_back(relu_layer());
    net.layers.push_back(dense_layer(n_classes, 64));
    int fan_in = input.size();
    int k = 0;
    for (auto& layer : net.layers) {
        if (!layer.has_weight()) continue;
        he_init(layer, fan_in, CounterRng::at(seed, static_cast<std::uint64_t>(k++)));
        fan_in = static_cast<int>(layer.weight.rows());
    }
    finalize(net);
    return net;
}

Network make_conv_s(Shape input, int n_classes, std::uint64_t seed) {
    Network net;
    net.input_shape = input;
    net.n_classes = n_classes;
    net.layers.push_back(conv2d_layer(8, input.c, 3, 3));
    net.layers.push_back(relu_layer());
    const int flat = 8 * (input.h - 2) * (input.w - 2);
    net.layers.push_back(dense_layer(n_classes, flat));
    he_init(net.layers[0], input.c * 9, CounterRng::at(seed, 0));
    he_init(net.layers[2], flat, CounterRng::at(seed, 1));
    finalize(net);
    return net;
}

Network make_network(const std::string& model, Shape input, int n_classes, std::uint64_t seed) {
    if (model == "mlp3") return make_mlp3(input, n_classes, seed);
    if (model == "conv_s") return make_conv_s(input, n_classes, seed);
    throw std::invalid_argument("make_network: unknown model '" + model + "'");
}

namespace {

// im2col: one row per (sample, output position), columns in (in_ch, ky, kx)
// order -- matching the flattened kernel layout.
Matrix im2col(const Matrix& act, const Layer& l) {
    const int b = static_cast<int>(act.rows());
    const Shape in = l.in_shape;
    const int oh = l.out_shape.h, ow = l.out_shape.w;
    Matrix patches(static_cast<Eigen::Index>(b) * oh * ow, l.in_ch * l.kh * l.kw);
    for (int s = 0; s < b; ++s)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const Eigen::Index row = (static_cast<Eigen::Index>(s) * oh + oy) * ow + ox;
                Eigen::Index col = 0;
                for (int c = 0; c < l.in_ch; ++c)
                    for (int ky = 0; ky < l.kh; ++ky)
                        for (int kx = 0; kx < l.kw; ++kx)
                            patches(row, col++) =
                                act(s, (c * in.h + oy + ky) * in.w + ox + kx);
            }
    return patches;
}

}  // namespace

Matrix forward(const Network& net, const Matrix& batch, Cache* cache) {
    if (batch.cols() != net.input_shape.size())
        throw std::invalid_argument("forward: batch width != input size");
    if (cache) {
        cache->inputs.assign(net.layers.size(), Matrix());
        cache->patches.assign(net.layers.size(), Matrix());
    }
    Matrix act = batch;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        if (cache) cache->inputs[i] = act;
        switch (l.kind) {
            case LayerKind::Dense:
                act = (act * l.weight.transpose()).rowwise() + l.bias.transpose();
                break;
            case LayerKind::Relu:
                act = act.cwiseMax(0.0);
                break;
            case LayerKind::Conv2d: {
                Matrix patches = im2col(act, l);
                Matrix flat = patches * l.weight.transpose();  // (b*oh*ow) x out_ch
                const int b = static_cast<int>(act.rows());
                const int spots = l.out_shape.h * l.out_shape.w;
                Matrix out(b, l.out_ch * spots);
                for (int s = 0; s < b; ++s)
                    for (int c = 0; c < l.out_ch; ++c)
                        for (int p = 0; p < spots; ++p)
                            out(s, c * spots + p) =
                                flat(static_cast<Eigen::Index>(s) * spots + p, c) + l.bias(c);
                if (cache) cache->patches[i] = std::move(patches);
                act = std::move(out);
                break;
            }
        }
    }
    if (cache) cache->logits = act;
    return act;
}

double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                             double label_smoothing) {
    const Eigen::Index b = logits.rows();
    const Eigen::Index k = logits.cols();
    if (static_cast<Eigen::Index>(labels.size()) != b)
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    const double alpha = label_smoothing;
    double loss = 0.0;
    for (Eigen::Index s = 0; s < b; ++s) {
        if (labels[s] < 0 || labels[s] >= k)
            throw std::out_of_range("softmax_cross_entropy: label out of range");
        const double m = logits.row(s).maxCoeff();
        const double lse = std::log((logits.row(s).array() - m).exp().sum()) + m;
        // cross-entropy against (1-alpha) * onehot + alpha / k
        double ce = (1.0 - alpha) * (lse - logits(s, labels[s]));
        if (alpha > 0.0)
            ce += (alpha / static_cast<double>(k)) *
                  (static_cast<double>(k) * lse - logits.row(s).sum());
        loss += ce;
    }
    return loss / static_cast<double>(b);
}

std::pair<double, Gradients> backward(const Network& net, const Cache& cache,
                                      const std::vector<int>& labels, double label_smoothing) {
    const Eigen::Index b = cache.logits.rows();
    const Eigen::Index k = cache.logits.cols();
    const double loss = softmax_cross_entropy(cache.logits, labels, label_smoothing);

    // d(loss)/d(logits) = (softmax - targets) / batch
    Matrix delta(b, k);
    for (Eigen::Index s = 0; s < b; ++s) {
        const double m = cache.logits.row(s).maxCoeff();
        Eigen::ArrayXd e = (cache.logits.row(s).array() - m).exp();
        delta.row(s) = (e / e.sum()).matrix();
        delta.row(s).array() -= label_smoothing / static_cast<double>(k);
        delta(s, labels[s]) -= 1.0 - label_smoothing;
    }
    delta /= static_cast<double>(b);

    Gradients grads;
    grads.weight.assign(net.layers.size(), Matrix());
    grads.bias.assign(net.layers.size(), Vector());
    for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
        const Layer& l = net.layers[i];
        switch (l.kind) {
            case LayerKind::Dense:
                grads.weight[i] = delta.transpose() * cache.inputs[i];
                grads.bias[i] = delta.colwise().sum();
                delta = delta * l.weight;
                break;
            case LayerKind::Relu:
                delta = ((cache.inputs[i].array() > 0.0).cast<double>() * delta.array()).matrix();
                break;
            case LayerKind::Conv2d: {
                const int spots = l.out_shape.h * l.out_shape.w;
                const int bs = static_cast<int>(delta.rows());
                Matrix dflat(static_cast<Eigen::Index>(bs) * spots, l.out_ch);
                for (int s = 0; s < bs; ++s)
                    for (int c = 0; c < l.out_ch; ++c)
                        for (int p = 0; p < spots; ++p)
                            dflat(static_cast<Eigen::Index>(s) * spots + p, c) =
                                delta(s, c * spots + p);
                grads.weight[i] = dflat.transpose() * cache.patches[i];
                grads.bias[i] = dflat.colwise().sum();
                // col2im scatter of dflat * W back onto the input grid
                Matrix dpatch = dflat * l.weight;
                const Shape in = l.in_shape;
                Matrix din = Matrix::Zero(bs, in.size());
                const int oh = l.out_shape.h, ow = l.out_shape.w;
                for (int s = 0; s < bs; ++s)
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            const Eigen::Index row =
                                (static_cast<Eigen::Index>(s) * oh + oy) * ow + ox;
                            Eigen::Index col = 0;
                            for (int c = 0; c < l.in_ch; ++c)
                                for (int ky = 0; ky < l.kh; ++ky)
                                    for (int kx = 0; kx < l.kw; ++kx)
                                        din(s, (c * in.h + oy + ky) * in.w + ox + kx) +=
                                            dpatch(row, col++);
                        }
                delta = std::move(din);
                break;
            }
        }
    }
    return {loss, grads};
}

namespace {

void write_doubles(std::ostream& os, const double* data, std::size_t n) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::istream& is, double* data, std::size_t n) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated parameter block");
}

void write_matrix_rowmajor(std::ostream& os, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const Eigen::RowVectorXd row = m.row(i);
        write_doubles(os, row.data(), static_cast<std::size_t>(row.size()));
    }
}

Matrix read_matrix_rowmajor(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    Eigen::RowVectorXd row(cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        read_doubles(is, row.data(), static_cast<std::size_t>(cols));
        m.row(i) = row;
    }
    return m;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp);
        os << "TAOTF1\n";
        os << "shape " << net.input_shape.c << ' ' << net.input_shape.h << ' '
           << net.input_shape.w << ' ' << net.n_classes << '\n';
        for (const Layer& l : net.layers) {
            switch (l.kind) {
                case LayerKind::Dense:
                    os << "dense " << l.weight.rows() << ' ' << l.weight.cols() << '\n';
                    write_matrix_rowmajor(os, l.weight);
                    write_doubles(os, l.bias.data(), static_cast<std::size_t>(l.bias.size()));
                    break;
                case LayerKind::Conv2d:
                    os << "conv2d " << l.out_ch << ' ' << l.in_ch << ' ' << l.kh << ' '
                       << l.kw << '\n';
                    write_matrix_rowmajor(os, l.weight);
                    write_doubles(os, l.bias.data(), static_cast<std::size_t>(l.bias.size()));
                    break;
                case LayerKind::Relu:
                    os << "relu\n";
                    break;
            }
        }
        if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Network load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string line;
    std::getline(is, line);
    if (line != "TAOTF1") throw std::runtime_error("checkpoint: bad magic in " + path);

    Network net;
    std::getline(is, line);
    {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag >> net.input_shape.c >> net.input_shape.h >> net.input_shape.w >>
            net.n_classes;
        if (tag != "shape" || !ss) throw std::runtime_error("checkpoint: bad shape line");
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "dense") {
            Eigen::Index out, in;
            ss >> out >> in;
            if (!ss) throw std::runtime_error("checkpoint: bad dense record");
            Layer l = dense_layer(static_cast<int>(out), static_cast<int>(in));
            l.weight = read_matrix_rowmajor(is, out, in);
            read_doubles(is, l.bias.data(), static_cast<std::size_t>(out));
            net.layers.push_back(std::move(l));
        } else if (kind == "conv2d") {
            int oc, ic, kh, kw;
            ss >> oc >> ic >> kh >> kw;
            if (!ss) throw std::runtime_error("checkpoint: bad conv2d record");
            Layer l = conv2d_layer(oc, ic, kh, kw);
            l.weight = read_matrix_rowmajor(is, oc, static_cast<Eigen::Index>(ic) * kh * kw);
            read_doubles(is, l.bias.data(), static_cast<std::size_t>(oc));
            net.layers.push_back(std::move(l));
        } else if (kind == "relu") {
            net.layers.push_back(relu_layer());
        } else {
            throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
        }
    }
    finalize(net);
    return net;
}

}  // namespace taotf::nn
