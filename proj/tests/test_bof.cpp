#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "foodrec/bof.hpp"
#include "foodrec/error.hpp"
#include "foodrec/rng.hpp"

using namespace foodrec;
using namespace foodrec::bof;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const char* tag) {
    static int counter = 0;
    return (fs::temp_directory_path() /
            ("foodrec_bof_" + std::to_string(::getpid()) + "_" + tag + "_" +
             std::to_string(counter++)))
        .string();
}

} // namespace

TEST_CASE("grayscale uses the decided luma weights") {
    Tensor img({1, 3, 3});
    // white, pure red, mid gray
    img(0, 0, 0) = 1.0f; img(0, 0, 1) = 1.0f; img(0, 0, 2) = 1.0f;
    img(0, 1, 0) = 1.0f; img(0, 1, 1) = 0.0f; img(0, 1, 2) = 0.0f;
    img(0, 2, 0) = 0.4f; img(0, 2, 1) = 0.4f; img(0, 2, 2) = 0.4f;
    const Tensor g = grayscale(img);
    CHECK(g(0, 0) == doctest::Approx(1.0f));
    CHECK(g(0, 1) == doctest::Approx(0.299f));
    CHECK(g(0, 2) == doctest::Approx(0.4f));
    CHECK_THROWS_AS(grayscale(Tensor({2, 2})), Error);
}

TEST_CASE("dense_descriptors grid and normalization") {
    SUBCASE("128x128 with step 8 patch 16 gives 225 descriptors") {
        const Tensor gray({128, 128});
        const auto descs = dense_descriptors(gray, 8, 16);
        CHECK(descs.size() == 225);
    }
    SUBCASE("constant image gives all-zero descriptors") {
        const Tensor gray = TensorT<float>::full({32, 32}, 0.7f);
        const auto descs = dense_descriptors(gray, 8, 16);
        for (const auto& d : descs)
            for (float v : d.v) CHECK(v == 0.0f);
    }
    SUBCASE("vertical step edge concentrates mass in horizontal-gradient bins") {
        Tensor gray({16, 16});
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) gray(y, x) = x < 8 ? 0.1f : 0.9f;
        const auto descs = dense_descriptors(gray, 8, 16);
        REQUIRE(descs.size() == 1);
        double horiz = 0.0, total = 0.0;
        for (int cell = 0; cell < 16; ++cell)
            for (int b = 0; b < 8; ++b) {
                const double v = descs[0].v[static_cast<std::size_t>(cell * 8 + b)];
                total += v;
                if (b == 0 || b == 4) horiz += v; // gx>0 and gx<0 orientations
            }
        REQUIRE(total > 0.0);
        CHECK(horiz / total > 0.9);
    }
    SUBCASE("descriptors are unit norm or all-zero, entries nonnegative") {
        Rng rng(5);
        Tensor gray({40, 40});
        for (auto& v : gray.values()) v = static_cast<float>(rng.next_double());
        const auto descs = dense_descriptors(gray, 8, 16);
        for (const auto& d : descs) {
            double norm2 = 0.0;
            for (float v : d.v) {
                CHECK(v >= 0.0f);
                norm2 += static_cast<double>(v) * v;
            }
            const bool unit = std::fabs(std::sqrt(norm2) - 1.0) < 1e-5;
            const bool zero = norm2 == 0.0;
            CHECK((unit || zero));
        }
    }
    SUBCASE("image smaller than the patch raises") {
        CHECK_THROWS_AS(dense_descriptors(Tensor({8, 8}), 8, 16), Error);
    }
    SUBCASE("grid locations are recorded") {
        const Tensor gray({24, 24});
        const auto descs = dense_descriptors(gray, 8, 16);
        REQUIRE(descs.size() == 4);
        CHECK(descs[0].grid_x == 0);
        CHECK(descs[0].grid_y == 0);
        CHECK(descs[3].grid_x == 8);
        CHECK(descs[3].grid_y == 8);
    }
}

TEST_CASE("kmeans") {
    SUBCASE("k=1 converges to the mean") {
        Tensor pts({4, 2}, {0, 0, 2, 0, 0, 2, 2, 2});
        const Codebook cb = kmeans(pts, 1, 20, 3);
        CHECK(cb.centroids(0, 0) == doctest::Approx(1.0));
        CHECK(cb.centroids(0, 1) == doctest::Approx(1.0));
    }
    SUBCASE("k distinct points, k clusters: zero objective") {
        Tensor pts({3, 2}, {0, 0, 5, 0, 0, 5});
        std::vector<double> history;
        const Codebook cb = kmeans(pts, 3, 20, 7, &history);
        CHECK(history.back() == doctest::Approx(0.0));
    }
    SUBCASE("two well-separated blobs match the brute-force restart oracle") {
        Rng rng(9);
        std::vector<float> data;
        for (int i = 0; i < 20; ++i) {
            data.push_back(static_cast<float>(rng.next_range(-0.5, 0.5)));
            data.push_back(static_cast<float>(rng.next_range(-0.5, 0.5)));
        }
        for (int i = 0; i < 20; ++i) {
            data.push_back(static_cast<float>(10.0 + rng.next_range(-0.5, 0.5)));
            data.push_back(static_cast<float>(10.0 + rng.next_range(-0.5, 0.5)));
        }
        Tensor pts({40, 2}, data);
        std::vector<double> history;
        kmeans(pts, 2, 50, 11, &history);

        // Oracle: run Lloyd to convergence from every pair of points and keep
        // the best objective.
        auto lloyd_obj = [&](int s0, int s1) {
            double c0[2] = {pts(s0, 0), pts(s0, 1)};
            double c1[2] = {pts(s1, 0), pts(s1, 1)};
            double obj = 0.0;
            for (int iter = 0; iter < 100; ++iter) {
                double sum0[2] = {0, 0}, sum1[2] = {0, 0};
                int n0 = 0, n1 = 0;
                obj = 0.0;
                for (int i = 0; i < 40; ++i) {
                    const double dx0 = pts(i, 0) - c0[0], dy0 = pts(i, 1) - c0[1];
                    const double dx1 = pts(i, 0) - c1[0], dy1 = pts(i, 1) - c1[1];
                    const double d0 = dx0 * dx0 + dy0 * dy0;
                    const double d1 = dx1 * dx1 + dy1 * dy1;
                    if (d0 <= d1) {
                        sum0[0] += pts(i, 0); sum0[1] += pts(i, 1); ++n0; obj += d0;
                    } else {
                        sum1[0] += pts(i, 0); sum1[1] += pts(i, 1); ++n1; obj += d1;
                    }
                }
                if (n0) { c0[0] = sum0[0] / n0; c0[1] = sum0[1] / n0; }
                if (n1) { c1[0] = sum1[0] / n1; c1[1] = sum1[1] / n1; }
            }
            return obj;
        };
        double best = 1e300;
        for (int a = 0; a < 40; ++a)
            for (int b = a + 1; b < 40; ++b) best = std::min(best, lloyd_obj(a, b));
        CHECK(history.back() == doctest::Approx(best).epsilon(1e-6));
    }
    SUBCASE("objective is non-increasing across Lloyd iterations") {
        Rng rng(21);
        for (int rep = 0; rep < 20; ++rep) {
            const int n = 12 + static_cast<int>(rng.next_index(20));
            const int dim = 2 + static_cast<int>(rng.next_index(5));
            const int k = 2 + static_cast<int>(rng.next_index(4));
            Tensor pts({n, dim});
            for (auto& v : pts.values()) v = static_cast<float>(rng.next_double());
            std::vector<double> history;
            kmeans(pts, k, 30, rng.next_u64(), &history);
            for (std::size_t i = 1; i < history.size(); ++i)
                CHECK(history[i] <= history[i - 1] * (1.0 + 1e-12) + 1e-12);
        }
    }
    SUBCASE("fewer points than k raises") {
        CHECK_THROWS_AS(kmeans(Tensor({2, 3}), 5, 10, 1), Error);
    }
}

TEST_CASE("encode_histogram") {
    SUBCASE("all descriptors nearest centroid 0") {
        Codebook cb;
        cb.centroids = Tensor({3, 2}, {0, 0, 50, 50, -50, -50});
        Tensor descs({4, 2}, {1, 0, 0, 1, -1, 0, 0, -1});
        const auto h = encode_histogram(descs, cb);
        CHECK(h[0] == 1.0f);
        CHECK(h[1] == 0.0f);
        CHECK(h[2] == 0.0f);
    }
    SUBCASE("histogram is L1-normalized") {
        Rng rng(3);
        Codebook cb;
        cb.centroids = Tensor({4, 3});
        for (auto& v : cb.centroids.values()) v = static_cast<float>(rng.next_double());
        Tensor descs({9, 3});
        for (auto& v : descs.values()) v = static_cast<float>(rng.next_double());
        const auto h = encode_histogram(descs, cb);
        float sum = 0.0f;
        for (float v : h) {
            CHECK(v >= 0.0f);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
    }
    SUBCASE("frozen 1-d example: centroids {0, 10}, descriptors {1,2,9}") {
        Codebook cb;
        cb.centroids = Tensor({2, 1}, {0.0f, 10.0f});
        Tensor descs({3, 1}, {1.0f, 2.0f, 9.0f});
        const auto h = encode_histogram(descs, cb);
        CHECK(h[0] == doctest::Approx(2.0 / 3));
        CHECK(h[1] == doctest::Approx(1.0 / 3));
    }
    SUBCASE("zero descriptors give the zero vector") {
        Codebook cb;
        cb.centroids = Tensor({2, 1}, {0.0f, 1.0f});
        const auto h = encode_histogram(Tensor(), cb);
        CHECK(h == std::vector<float>{0.0f, 0.0f});
    }
    SUBCASE("dimension mismatch raises") {
        Codebook cb;
        cb.centroids = Tensor({2, 3});
        CHECK_THROWS_AS(encode_histogram(Tensor({4, 2}), cb), Error);
    }
}

TEST_CASE("svm") {
    SUBCASE("linearly separable toy set reaches 100% train accuracy") {
        Rng rng(5);
        const int n = 40;
        Tensor x({n, 2});
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            const bool pos = i % 2 == 0;
            x(i, 0) = static_cast<float>(rng.next_range(0, 1) + (pos ? 2.0 : -2.0));
            x(i, 1) = static_cast<float>(rng.next_range(-1, 1));
            y[static_cast<std::size_t>(i)] = pos ? 1 : 0;
        }
        const SvmModel m = svm_train(x, y, 1e-3, 50, 7);
        int correct = 0;
        for (int i = 0; i < n; ++i) {
            const std::vector<float> f{x(i, 0), x(i, 1)};
            if (svm_predict(m, f) == y[static_cast<std::size_t>(i)]) ++correct;
        }
        CHECK(correct == n);
    }
    SUBCASE("huge lambda shrinks the weights toward zero") {
        Rng rng(6);
        Tensor x({20, 3});
        std::vector<int> y(20);
        for (int i = 0; i < 20; ++i) {
            for (int d = 0; d < 3; ++d) x(i, d) = static_cast<float>(rng.next_double());
            y[static_cast<std::size_t>(i)] = i % 2;
        }
        const SvmModel m = svm_train(x, y, 1e6, 20, 3);
        double norm = 0.0;
        for (float v : m.weights.values()) norm += static_cast<double>(v) * v;
        CHECK(std::sqrt(norm) < 1e-2);
    }
    SUBCASE("deterministic per seed") {
        Rng rng(8);
        Tensor x({16, 4});
        std::vector<int> y(16);
        for (int i = 0; i < 16; ++i) {
            for (int d = 0; d < 4; ++d) x(i, d) = static_cast<float>(rng.next_double());
            y[static_cast<std::size_t>(i)] = i % 3;
        }
        const SvmModel a = svm_train(x, y, 1e-4, 10, 99);
        const SvmModel b = svm_train(x, y, 1e-4, 10, 99);
        CHECK(std::memcmp(a.weights.data(), b.weights.data(),
                          a.weights.size() * sizeof(float)) == 0);
        CHECK(a.bias == b.bias);
    }
    SUBCASE("single-class input raises") {
        Tensor x({4, 2});
        CHECK_THROWS_AS(svm_train(x, {1, 1, 1, 1}, 1e-4, 5, 1), Error);
    }
    SUBCASE("svm_predict tie and argmax rules") {
        SvmModel m;
        m.weights = Tensor({3, 2});
        m.bias = {0.0f, 0.0f, 0.0f};
        CHECK(svm_predict(m, {1.0f, 1.0f}) == 0); // all-zero scores: lowest index
        m.bias = {0.1f, 0.9f, 0.3f};
        CHECK(svm_predict(m, {0.0f, 0.0f}) == 1);
        // uniform positive scaling leaves the argmax unchanged
        SvmModel scaled = m;
        for (auto& v : scaled.weights.values()) v *= 7.0f;
        for (auto& v : scaled.bias) v *= 7.0f;
        Rng rng(2);
        for (int rep = 0; rep < 20; ++rep) {
            const std::vector<float> f{static_cast<float>(rng.next_double()),
                                       static_cast<float>(rng.next_double())};
            CHECK(svm_predict(m, f) == svm_predict(scaled, f));
        }
        CHECK_THROWS_AS(svm_predict(m, {1.0f, 2.0f, 3.0f}), Error);
    }
}

TEST_CASE("bof model file round trip") {
    Rng rng(31);
    BofModel m;
    m.codebook.centroids = Tensor({8, 128});
    for (auto& v : m.codebook.centroids.values()) v = static_cast<float>(rng.next_double());
    m.svm.weights = Tensor({4, 8});
    for (auto& v : m.svm.weights.values()) v = static_cast<float>(rng.next_double());
    m.svm.bias = {0.1f, -0.5f, 0.25f, 0.0f};

    const std::string path = temp_file("model");
    save_bof(m, path);
    const BofModel back = load_bof(path);
    CHECK(std::memcmp(back.codebook.centroids.data(), m.codebook.centroids.data(),
                      m.codebook.centroids.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(back.svm.weights.data(), m.svm.weights.data(),
                      m.svm.weights.size() * sizeof(float)) == 0);
    CHECK(back.svm.bias == m.svm.bias);

    SUBCASE("save-load-save is byte-identical") {
        const std::string path2 = temp_file("model2");
        save_bof(back, path2);
        std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), {});
        std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
        fs::remove(path2);
    }
    SUBCASE("bad magic raises") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(1);
        f.put('X');
        f.close();
        try {
            load_bof(path);
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::bad_magic);
        }
    }
    fs::remove(path);
}

TEST_CASE("pipeline determinism on a small synthetic set") {
    const PackedDataset data = make_synthetic(10, 3, 17, 32);
    BofTrainOptions opt;
    opt.k = 8;
    opt.svm_epochs = 10;
    opt.kmeans_iters = 10;
    opt.seed = 5;
    const BofModel a = train_pipeline(data, opt);
    const BofModel b = train_pipeline(data, opt);
    CHECK(std::memcmp(a.codebook.centroids.data(), b.codebook.centroids.data(),
                      a.codebook.centroids.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(a.svm.weights.data(), b.svm.weights.data(),
                      a.svm.weights.size() * sizeof(float)) == 0);
    const auto pa = predict_pipeline(a, data);
    const auto pb = predict_pipeline(b, data);
    CHECK(pa == pb);
}
