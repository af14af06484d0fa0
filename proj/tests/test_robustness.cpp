#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "taotf/robustness.hpp"
#include "taotf/stiefel.hpp"
#include "test_helpers.hpp"

using namespace taotf;
using taotf::testing::random_matrix;

namespace {

Matrix random_image(int h, int w, std::uint64_t seed) {
    CounterRng rng(seed);
    Matrix img(h, w);
    for (int y = 0; y < h; ++y)
        for (int c = 0; c < w; ++c) img(y, c) = rng.next_uniform();
    return img;
}

std::vector<robustness::CorruptionKind> all_kinds() {
    return {robustness::CorruptionKind::GaussianNoise,
            robustness::CorruptionKind::MultiplicativeNoise,
            robustness::CorruptionKind::GaussianBlur,
            robustness::CorruptionKind::Brightness,
            robustness::CorruptionKind::Saturation,
            robustness::CorruptionKind::Rotation};
}

// Independent replay of the documented counter stream for the golden test.
std::uint64_t replay_word(std::uint64_t seed, std::uint64_t i) {
    std::uint64_t z = seed + (i + 1) * UINT64_C(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)) * UINT64_C(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)) * UINT64_C(0x94D049BB133111EB);
    return z ^ (z >> 31);
}

double replay_normal(std::uint64_t seed, std::uint64_t first_word) {
    const double u1 = static_cast<double>((replay_word(seed, first_word) >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(replay_word(seed, first_word + 1) >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace

TEST_CASE("severity zero is the exact identity for every kind") {
    const Matrix img = random_image(9, 7, 1);
    for (auto kind : all_kinds()) {
        const Matrix out = robustness::corrupt(img, {kind, 0.0, 42});
        CHECK(out == img);
    }
}

TEST_CASE("corrupted outputs stay in [0, 1]") {
    const Matrix img = random_image(12, 12, 2);
    for (auto kind : all_kinds()) {
        const Matrix out = robustness::corrupt(img, {kind, 2.0, 7});
        CHECK(out.minCoeff() >= 0.0);
        CHECK(out.maxCoeff() <= 1.0);
    }
}

TEST_CASE("brightness shifts a constant image by the severity") {
    const Matrix img = Matrix::Constant(5, 5, 0.5);
    const Matrix out =
        robustness::corrupt(img, {robustness::CorruptionKind::Brightness, 0.2, 0});
    CHECK((out - Matrix::Constant(5, 5, 0.7)).norm() <= 1e-14);
}

TEST_CASE("blur preserves constant images") {
    const Matrix img = Matrix::Constant(8, 8, 0.5);
    const Matrix out =
        robustness::corrupt(img, {robustness::CorruptionKind::GaussianBlur, 1.5, 0});
    CHECK((out - img).norm() <= 1e-12);
}

TEST_CASE("saturation is the identity on constant images and expands contrast") {
    const Matrix img = Matrix::Constant(6, 6, 0.4);
    const Matrix out =
        robustness::corrupt(img, {robustness::CorruptionKind::Saturation, 2.0, 0});
    CHECK((out - img).norm() <= 1e-12);

    Matrix two(1, 2);
    two << 0.4, 0.6;  // mean 0.5, factor 3: 0.5 +- 0.3
    const Matrix stretched =
        robustness::corrupt(two, {robustness::CorruptionKind::Saturation, 2.0, 0});
    CHECK(stretched(0, 0) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(stretched(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("rotation by 360 degrees equals the identity") {
    const Matrix img = random_image(11, 11, 3);
    const Matrix out =
        robustness::corrupt(img, {robustness::CorruptionKind::Rotation, 360.0, 0});
    CHECK((out - img).norm() <= 1e-12);
}

TEST_CASE("corruptions are deterministic per seed") {
    const Matrix img = random_image(8, 8, 4);
    const robustness::CorruptionSpec spec{robustness::CorruptionKind::GaussianNoise, 0.3, 17};
    CHECK(robustness::corrupt(img, spec) == robustness::corrupt(img, spec));
    const robustness::CorruptionSpec other{robustness::CorruptionKind::GaussianNoise, 0.3, 18};
    CHECK(robustness::corrupt(img, spec) != robustness::corrupt(img, other));
}

TEST_CASE("golden gaussian noise replays the documented rng stream") {
    Matrix img(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int c = 0; c < 4; ++c) img(y, c) = (y * 4 + c) / 16.0;
    const Matrix out =
        robustness::corrupt(img, {robustness::CorruptionKind::GaussianNoise, 0.3, 11});
    // oracle: an independent implementation of the documented stream; pixel
    // (y, c) in row-major order consumes words 2*(4y+c) and 2*(4y+c)+1
    for (int y = 0; y < 4; ++y)
        for (int c = 0; c < 4; ++c) {
            const double n = replay_normal(11, 2 * static_cast<std::uint64_t>(y * 4 + c));
            const double want = std::min(1.0, std::max(0.0, img(y, c) + 0.3 * n));
            CHECK(out(y, c) == want);
        }
}

TEST_CASE("negative severity is rejected") {
    CHECK_THROWS_AS(robustness::corrupt(Matrix::Zero(2, 2),
                                        {robustness::CorruptionKind::Brightness, -0.1, 0}),
                    std::invalid_argument);
}

TEST_CASE("synthesize_dataset is deterministic, balanced, and separable") {
    const auto a = robustness::synthesize_dataset(200, 12, 12, 4, 9);
    const auto b = robustness::synthesize_dataset(200, 12, 12, 4, 9);
    REQUIRE(a.size() == 200);
    for (int i = 0; i < a.size(); ++i) {
        CHECK(a.images[i] == b.images[i]);
        CHECK(a.labels[i] == b.labels[i]);
    }

    std::vector<int> counts(4, 0);
    for (int label : a.labels) ++counts[label];
    for (int k = 0; k < 4; ++k) CHECK(std::abs(counts[k] - 50) <= 1);

    for (const Matrix& img : a.images) {
        CHECK(img.minCoeff() >= 0.0);
        CHECK(img.maxCoeff() <= 1.0);
    }

    CHECK(robustness::template_classifier_accuracy(a) > 0.95);
}

TEST_CASE("splits are disjoint, covering, and sized 70/10/20") {
    const auto data = robustness::synthesize_dataset(100, 8, 8, 2, 5);
    CHECK(data.train_idx.size() == 70);
    CHECK(data.val_idx.size() == 10);
    CHECK(data.test_idx.size() == 20);
    std::set<int> all;
    for (int i : data.train_idx) all.insert(i);
    for (int i : data.val_idx) all.insert(i);
    for (int i : data.test_idx) all.insert(i);
    CHECK(all.size() == 100);
    CHECK(*all.begin() == 0);
    CHECK(*all.rbegin() == 99);
}

TEST_CASE("batch_from flattens row-major and labels_from follows indices") {
    const auto data = robustness::synthesize_dataset(20, 8, 8, 2, 6);
    const Matrix batch = robustness::batch_from(data, {3, 7});
    CHECK(batch.rows() == 2);
    CHECK(batch.cols() == 64);
    CHECK(batch(0, 8 * 2 + 5) == data.images[3](2, 5));
    CHECK(robustness::labels_from(data, {3, 7}) ==
          std::vector<int>({data.labels[3], data.labels[7]}));
}

TEST_CASE("robustness_table at severity zero reproduces clean accuracy") {
    const auto data = robustness::synthesize_dataset(80, 8, 8, 2, 7);
    nn::Network net = nn::make_mlp3({1, 8, 8}, 2, 7);
    std::vector<robustness::CorruptionSpec> specs;
    for (auto kind : all_kinds()) specs.push_back({kind, 0.0, 3});
    const auto table = robustness::robustness_table(net, data, specs);
    REQUIRE(table.rows.size() == 6);
    for (const auto& row : table.rows) CHECK(row.accuracy == table.clean_accuracy);
}

TEST_CASE("empirical_lipschitz closed forms") {
    // identity layer: ratio is exactly 1
    nn::Network id;
    id.input_shape = {1, 1, 4};
    id.n_classes = 4;
    id.layers.push_back(nn::dense_layer(4, 4));
    id.layers[0].weight = Matrix::Identity(4, 4);
    nn::finalize(id);
    const Matrix samples = random_matrix(32, 4, 8);
    CHECK(robustness::empirical_lipschitz(id, samples, 64, 1) ==
          doctest::Approx(1.0).epsilon(1e-9));

    // 2I doubles every distance
    nn::Network twice = id;
    twice.layers[0].weight = 2.0 * Matrix::Identity(4, 4);
    CHECK(robustness::empirical_lipschitz(twice, samples, 64, 1) ==
          doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("a composition of square orthogonal layers has lipschitz 1") {
    nn::Network net;
    net.input_shape = {1, 1, 6};
    net.n_classes = 6;
    net.layers.push_back(nn::dense_layer(6, 6));
    net.layers.push_back(nn::dense_layer(6, 6));
    net.layers[0].weight = stiefel::random_point(6, 6, 21).mat();
    net.layers[1].weight = stiefel::random_point(6, 6, 22).mat();
    nn::finalize(net);
    const Matrix samples = random_matrix(32, 6, 23);
    CHECK(std::abs(robustness::empirical_lipschitz(net, samples, 128, 2) - 1.0) <= 1e-8);
}

TEST_CASE("spectrum_report on crafted layers") {
    nn::Network net;
    net.input_shape = {1, 1, 4};
    net.n_classes = 2;
    net.layers.push_back(nn::dense_layer(4, 4));
    net.layers.push_back(nn::dense_layer(2, 4));
    net.layers[0].weight = Matrix::Identity(4, 4);
    Matrix w = Matrix::Zero(2, 4);
    w(0, 0) = 2.0;
    w(1, 1) = 1.0;
    net.layers[1].weight = w;
    nn::finalize(net);

    const auto report = robustness::spectrum_report(net);
    REQUIRE(report.size() == 2);
    CHECK(report[0].sigma_max == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(report[0].sigma_min == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(report[0].orth_error <= 1e-10);
    CHECK(report[1].sigma_max == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(report[1].sigma_min == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(report[1].orth_error == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("dataset save/load round trip is bit-identical") {
    const auto data = robustness::synthesize_dataset(30, 8, 8, 3, 13);
    const std::string p1 = "ds_roundtrip_a.bin", p2 = "ds_roundtrip_b.bin";
    robustness::save_dataset(data, p1);
    auto back = robustness::load_dataset(p1);
    robustness::save_dataset(back, p2);

    auto slurp = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };
    CHECK(slurp(p1) == slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());

    REQUIRE(back.size() == data.size());
    CHECK(back.n_classes == data.n_classes);
    for (int i = 0; i < data.size(); ++i) {
        CHECK(back.images[i] == data.images[i]);
        CHECK(back.labels[i] == data.labels[i]);
    }
    CHECK(back.train_idx.empty());  // splits are not stored
}

TEST_CASE("load_dataset rejects a bad magic") {
    const std::string p = "ds_badmagic.bin";
    {
        std::ofstream os(p, std::ios::binary);
        os << "NOT-A-DATASET\n";
    }
    CHECK_THROWS_AS(robustness::load_dataset(p), std::runtime_error);
    std::remove(p.c_str());
}

TEST_CASE("idx loader reads a handcrafted pair of files") {
    const std::string ip = "idx_imgs.bin", lp = "idx_labels.bin";
    auto be32 = [](std::ofstream& os, std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v)};
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    {
        std::ofstream os(ip, std::ios::binary);
        be32(os, 0x803);
        be32(os, 2);  // n
        be32(os, 2);  // h
        be32(os, 3);  // w
        const unsigned char px[12] = {0, 51, 102, 153, 204, 255, 255, 204, 153, 102, 51, 0};
        os.write(reinterpret_cast<const char*>(px), 12);
    }
    {
        std::ofstream os(lp, std::ios::binary);
        be32(os, 0x801);
        be32(os, 2);
        const unsigned char labs[2] = {1, 0};
        os.write(reinterpret_cast<const char*>(labs), 2);
    }
    const auto data = robustness::load_idx(ip, lp);
    std::remove(ip.c_str());
    std::remove(lp.c_str());
    REQUIRE(data.size() == 2);
    CHECK(data.h == 2);
    CHECK(data.w == 3);
    CHECK(data.n_classes == 2);
    CHECK(data.labels == std::vector<int>({1, 0}));
    CHECK(data.images[0](0, 0) == 0.0);
    CHECK(data.images[0](0, 1) == doctest::Approx(51.0 / 255.0).epsilon(1e-14));
    CHECK(data.images[0](1, 2) == 1.0);
    CHECK(data.images[1](1, 2) == 0.0);
}

TEST_CASE("corruption kind string round trips") {
    for (auto kind : all_kinds())
        CHECK(robustness::corruption_kind_from_string(robustness::to_string(kind)) == kind);
    CHECK_THROWS_AS(robustness::corruption_kind_from_string("fog"), std::invalid_argument);
}
