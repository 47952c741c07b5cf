#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "foodrec/dataset.hpp"
#include "foodrec/error.hpp"
#include "foodrec/metrics.hpp"
#include "foodrec/network.hpp"

using namespace foodrec;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const char* tag) {
    static int counter = 0;
    return (fs::temp_directory_path() /
            ("foodrec_net_" + std::to_string(::getpid()) + "_" + tag + "_" +
             std::to_string(counter++)))
        .string();
}

NetworkModel tiny_model(std::uint64_t seed, float p1 = 0.0f, float p2 = 0.0f) {
    // 8x8x1 input: conv3/2 relu pool dropout flatten dense(18,6) relu
    // dropout dense(6,3) softmax
    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec::make_conv(3, 1, 2));
    layers.push_back(LayerSpec::make_relu());
    layers.push_back(LayerSpec::make_maxpool());
    layers.push_back(LayerSpec::make_dropout(p1));
    layers.push_back(LayerSpec::make_flatten());
    layers.push_back(LayerSpec::make_dense(3 * 3 * 2, 6));
    layers.push_back(LayerSpec::make_relu());
    layers.push_back(LayerSpec::make_dropout(p2));
    layers.push_back(LayerSpec::make_dense(6, 3));
    layers.push_back(LayerSpec::make_softmax());
    return build_network(std::move(layers), {"a", "b", "c"}, seed);
}

Tensor random_batch(int b, int h, int w, int c, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t({b, h, w, c});
    for (auto& v : t.values()) v = static_cast<float>(rng.next_double());
    return t;
}

bool tensors_bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool models_bit_equal(const NetworkModel& a, const NetworkModel& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (!tensors_bit_equal(a.weights[i], b.weights[i])) return false;
        if (!tensors_bit_equal(a.biases[i], b.biases[i])) return false;
    }
    return true;
}

} // namespace

TEST_CASE("five-layer network construction") {
    const NetworkModel m = build_five_layer_network(1);
    SUBCASE("first dense weight shape follows the valid-padding chain") {
        bool found = false;
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            if (m.layers[i].kind == LayerKind::dense) {
                CHECK(m.weights[i].shape() == std::vector<int>{21632, 128});
                found = true;
                break;
            }
        }
        CHECK(found);
    }
    SUBCASE("total trainable parameter count matches the summation oracle") {
        // 7*7*3*32+32 + 5*5*32*64+64 + 3*3*64*128+128 + 21632*128+128 + 128*10+10
        std::size_t expected = 0;
        expected += 7 * 7 * 3 * 32 + 32;
        expected += 5 * 5 * 32 * 64 + 64;
        expected += 3 * 3 * 64 * 128 + 128;
        expected += 21632 * 128 + 128;
        expected += 128 * 10 + 10;
        CHECK(expected == 2900170);
        CHECK(m.parameter_count() == expected);
    }
    SUBCASE("equal seeds build bit-identical parameters") {
        const NetworkModel m2 = build_five_layer_network(1);
        CHECK(models_bit_equal(m, m2));
        const NetworkModel m3 = build_five_layer_network(2);
        CHECK(!models_bit_equal(m, m3));
    }
    SUBCASE("biases start at zero") {
        for (const auto& b : m.biases)
            for (float v : b.values()) CHECK(v == 0.0f);
    }
}

TEST_CASE("forward contract") {
    const NetworkModel m = tiny_model(3, 0.25f, 0.5f);
    const Tensor batch = random_batch(4, 8, 8, 1, 5);
    Rng rng(1);

    SUBCASE("eval probs rows sum to 1") {
        const Tensor probs = forward(m, batch, RunMode::eval, rng);
        REQUIRE(probs.shape() == std::vector<int>{4, 3});
        for (int i = 0; i < 4; ++i) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                s += probs(i, c);
                CHECK(probs(i, c) >= 0.0f);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
    SUBCASE("train mode consumes exactly B rng draws") {
        Rng r(9), manual(9);
        forward(m, batch, RunMode::train, r);
        for (int i = 0; i < 4; ++i) manual.next_u64();
        CHECK(r.state() == manual.state());
        Rng re(9);
        forward(m, batch, RunMode::eval, re);
        CHECK(re.state() == Rng(9).state());
    }
    SUBCASE("dropout p=0 behaves like no dropout layer") {
        const NetworkModel with_p0 = tiny_model(3, 0.0f, 0.0f);
        std::vector<LayerSpec> layers;
        layers.push_back(LayerSpec::make_conv(3, 1, 2));
        layers.push_back(LayerSpec::make_relu());
        layers.push_back(LayerSpec::make_maxpool());
        layers.push_back(LayerSpec::make_flatten());
        layers.push_back(LayerSpec::make_dense(3 * 3 * 2, 6));
        layers.push_back(LayerSpec::make_relu());
        layers.push_back(LayerSpec::make_dense(6, 3));
        layers.push_back(LayerSpec::make_softmax());
        NetworkModel without = build_network(std::move(layers), {"a", "b", "c"}, 3);
        // same init draws in the same order, so parameters coincide
        Rng r1(4), r2(4);
        const Tensor pa = forward(with_p0, batch, RunMode::train, r1);
        const Tensor pb = forward(without, batch, RunMode::train, r2);
        REQUIRE(pa.shape() == pb.shape());
        for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    }
    SUBCASE("zero-weight final dense gives uniform probabilities") {
        NetworkModel z = tiny_model(7);
        for (std::size_t i = z.layers.size(); i-- > 0;) {
            if (z.layers[i].kind == LayerKind::dense) {
                for (auto& v : z.weights[i].values()) v = 0.0f;
                for (auto& v : z.biases[i].values()) v = 0.0f;
                break;
            }
        }
        const Tensor probs = forward(z, batch, RunMode::eval, rng);
        for (std::size_t i = 0; i < probs.size(); ++i)
            CHECK(probs[i] == doctest::Approx(1.0 / 3).epsilon(1e-6));
    }
    SUBCASE("wrong spatial shape raises a structured error") {
        const Tensor bad = random_batch(2, 12, 12, 1, 6);
        CHECK_THROWS_AS(forward(m, bad, RunMode::eval, rng), Error);
        const Tensor bad_channels = random_batch(2, 8, 8, 3, 6);
        CHECK_THROWS_AS(forward(m, bad_channels, RunMode::eval, rng), Error);
    }
}

TEST_CASE("softmax contract") {
    SUBCASE("equal logits, 10 classes, all 0.1") {
        const auto p = softmax(std::vector<double>(10, 3.7));
        for (double v : p) CHECK(v == doctest::Approx(0.1).epsilon(1e-12));
    }
    SUBCASE("(0, ln 2) gives (1/3, 2/3)") {
        const auto p = softmax({0.0, std::log(2.0)});
        CHECK(p[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));
    }
    SUBCASE("huge equal logits do not overflow") {
        const auto p = softmax({1000.0, 1000.0});
        CHECK(p[0] == doctest::Approx(0.5));
        CHECK(p[1] == doctest::Approx(0.5));
    }
    SUBCASE("shift invariance within 1e-6") {
        const std::vector<double> z{0.3, -1.2, 2.5, 0.0};
        const auto a = softmax(z);
        std::vector<double> shifted = z;
        for (auto& v : shifted) v += 123.456;
        const auto b = softmax(shifted);
        for (std::size_t i = 0; i < z.size(); ++i)
            CHECK(std::fabs(a[i] - b[i]) < 1e-6);
    }
}

TEST_CASE("cross_entropy contract") {
    SUBCASE("uniform probabilities give ln K") {
        const Tensor probs = Tensor::full({2, 10}, 0.1f);
        CHECK(cross_entropy(probs, {3, 7}) == doctest::Approx(std::log(10.0)).epsilon(1e-6));
    }
    SUBCASE("probability one on the true class gives zero") {
        Tensor probs({1, 3});
        probs(0, 1) = 1.0f;
        CHECK(cross_entropy(probs, {1}) == doctest::Approx(0.0));
    }
    SUBCASE("frozen two-sample example") {
        Tensor probs({2, 2});
        probs(0, 0) = 0.5f;
        probs(0, 1) = 0.5f;
        probs(1, 0) = 0.25f;
        probs(1, 1) = 0.75f;
        CHECK(cross_entropy(probs, {0, 0}) ==
              doctest::Approx(-(std::log(0.5) + std::log(0.25)) / 2).epsilon(1e-6));
    }
    SUBCASE("label out of range raises") {
        const Tensor probs = Tensor::full({1, 3}, 1.0f / 3);
        CHECK_THROWS_AS(cross_entropy(probs, {3}), Error);
    }
}

TEST_CASE("backward") {
    SUBCASE("zero input: conv kernel grads vanish, bias grads do not") {
        const NetworkModel m = tiny_model(11);
        const Tensor zeros({2, 8, 8, 1});
        Rng rng(1);
        BatchCachePtr cache;
        forward(m, zeros, RunMode::train, rng, &cache);
        const Gradients g = backward(m, cache, {0, 2});
        double conv_norm = 0.0, bias_norm = 0.0;
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            if (m.layers[i].kind == LayerKind::conv)
                for (float v : g.weights[i].values()) conv_norm += std::fabs(v);
            if (!g.biases[i].empty())
                for (float v : g.biases[i].values()) bias_norm += std::fabs(v);
        }
        CHECK(conv_norm == 0.0);
        CHECK(bias_norm > 0.0);
    }
    SUBCASE("cache/label batch mismatch raises") {
        const NetworkModel m = tiny_model(11);
        const Tensor batch = random_batch(2, 8, 8, 1, 3);
        Rng rng(1);
        BatchCachePtr cache;
        forward(m, batch, RunMode::train, rng, &cache);
        CHECK_THROWS_AS(backward(m, cache, {0, 1, 2}), Error);
    }
}

TEST_CASE("lr_schedule") {
    CHECK(lr_schedule(0.001, 0.0, 0.05) == doctest::Approx(0.001));
    CHECK(lr_schedule(0.001, std::log(10.0), 0.05) == doctest::Approx(0.01));
    CHECK(lr_schedule(0.001, 5.0, 0.05) == 0.05); // clamped; unclamped 0.1484
    SUBCASE("monotone nondecreasing in C, clamped at eta_max") {
        Rng rng(5);
        double prev = 0.0;
        for (int i = 0; i <= 100; ++i) {
            const double c = 0.08 * i;
            const double eta = lr_schedule(0.001, c, 0.05);
            CHECK(eta >= prev);
            CHECK(eta <= 0.05);
            prev = eta;
        }
    }
}

TEST_CASE("sgd_update") {
    SUBCASE("eta 0 leaves params unchanged") {
        Tensor p({3}, {1.0f, -2.0f, 3.0f});
        const Tensor p0 = p;
        sgd_update(p, Tensor({3}, {5.0f, 5.0f, 5.0f}), 0.0f);
        CHECK(tensors_bit_equal(p, p0));
    }
    SUBCASE("p=1, g=2, eta=0.1 gives 0.8") {
        Tensor p({1}, {1.0f});
        sgd_update(p, Tensor({1}, {2.0f}), 0.1f);
        CHECK(p[0] == doctest::Approx(0.8f));
    }
    SUBCASE("gradient descent on p^2 follows the closed form 0.8^k") {
        Tensor p({1}, {1.0f});
        for (int k = 1; k <= 20; ++k) {
            sgd_update(p, Tensor({1}, {2.0f * p[0]}), 0.1f);
            CHECK(p[0] == doctest::Approx(std::pow(0.8, k)).epsilon(1e-5));
        }
    }
}

TEST_CASE("training loop") {
    const PackedDataset train_set = make_synthetic(10, 2, 5, 32);
    const PackedDataset test_set = make_synthetic(10, 2, 6, 32);

    SUBCASE("patience 1 with no improvement stops at epoch 2") {
        NetworkModel m = build_five_layer_network(32, 32, 3, train_set.class_names, 1);
        TrainConfig cfg;
        cfg.eta0 = 1e-300; // effectively frozen: test accuracy can never improve
        cfg.eta_max = 1e-299;
        cfg.max_epochs = 50;
        cfg.patience = 1;
        cfg.batch_size = 8;
        cfg.seed = 3;
        const TrainResult r = train(std::move(m), train_set, test_set, cfg);
        CHECK(r.curves.size() == 2);
    }
    SUBCASE("same seed gives bit-identical curves and parameters") {
        TrainConfig cfg;
        cfg.max_epochs = 3;
        cfg.patience = 10;
        cfg.batch_size = 8;
        cfg.seed = 77;
        const TrainResult a =
            train(build_five_layer_network(32, 32, 3, train_set.class_names, 9), train_set,
                  test_set, cfg);
        const TrainResult b =
            train(build_five_layer_network(32, 32, 3, train_set.class_names, 9), train_set,
                  test_set, cfg);
        REQUIRE(a.curves.size() == b.curves.size());
        for (std::size_t i = 0; i < a.curves.size(); ++i) {
            CHECK(a.curves[i].train_loss == b.curves[i].train_loss);
            CHECK(a.curves[i].test_acc == b.curves[i].test_acc);
            CHECK(a.curves[i].eta == b.curves[i].eta);
        }
        CHECK(models_bit_equal(a.model, b.model));
    }
    SUBCASE("eta follows the schedule from the previous epoch's loss") {
        TrainConfig cfg;
        cfg.max_epochs = 4;
        cfg.patience = 10;
        cfg.batch_size = 8;
        cfg.seed = 5;
        const TrainResult r =
            train(build_five_layer_network(32, 32, 3, train_set.class_names, 2), train_set,
                  test_set, cfg);
        REQUIRE(r.curves.size() == 4);
        CHECK(r.curves[0].eta == lr_schedule(cfg.eta0, std::log(10.0), cfg.eta_max));
        for (std::size_t e = 1; e < r.curves.size(); ++e)
            CHECK(r.curves[e].eta ==
                  lr_schedule(cfg.eta0, r.curves[e - 1].train_loss, cfg.eta_max));
    }
    SUBCASE("empty sets raise") {
        TrainConfig cfg;
        cfg.seed = 1;
        PackedDataset empty;
        empty.class_names = train_set.class_names;
        CHECK_THROWS_AS(train(build_five_layer_network(32, 32, 3, train_set.class_names, 1), empty,
                              test_set, cfg),
                        Error);
    }
}

TEST_CASE("overfit two images and reproduce their labels") {
    PackedDataset two = make_synthetic(10, 2, 42, 32);
    two.records.resize(2); // one class-0 image, one class-0... take classes 0 and 1
    PackedDataset small = make_synthetic(10, 2, 42, 32);
    two.records[1] = small.records[2]; // a class-1 record
    REQUIRE(two.records[0].label == 0);
    REQUIRE(two.records[1].label == 1);

    NetworkModel m = build_five_layer_network(32, 32, 3, two.class_names, 7);
    TrainConfig cfg;
    cfg.max_epochs = 60;
    cfg.patience = 60;
    cfg.batch_size = 2;
    cfg.seed = 2;
    const TrainResult r = train(std::move(m), two, two, cfg);
    const EvalStats stats = evaluate(r.model, two);
    CHECK(stats.accuracy == 1.0);
    CHECK(stats.predictions[0] == 0);
    CHECK(stats.predictions[1] == 1);
}

TEST_CASE("predict") {
    const NetworkModel m = tiny_model(13, 0.25f, 0.5f);
    const Tensor batch = random_batch(3, 8, 8, 1, 8);
    SUBCASE("zero-weight final layer predicts class 0 everywhere (tie rule)") {
        NetworkModel z = m;
        for (std::size_t i = z.layers.size(); i-- > 0;) {
            if (z.layers[i].kind == LayerKind::dense) {
                for (auto& v : z.weights[i].values()) v = 0.0f;
                for (auto& v : z.biases[i].values()) v = 0.0f;
                break;
            }
        }
        for (int p : predict(z, batch)) CHECK(p == 0);
    }
    SUBCASE("prediction ignores dropout rates (eval mode)") {
        const NetworkModel alt = tiny_model(13, 0.9f, 0.9f); // same seed, same params
        CHECK(predict(m, batch) == predict(alt, batch));
    }
}

TEST_CASE("checkpoint round trip") {
    const std::string path = temp_file("ckpt");
    const NetworkModel m = tiny_model(21, 0.25f, 0.5f);
    save_checkpoint(m, path);

    SUBCASE("save-load-save produces byte-identical files") {
        const NetworkModel back = load_checkpoint(path);
        CHECK(models_bit_equal(m, back));
        CHECK(back.class_names == m.class_names);
        const std::string path2 = temp_file("ckpt2");
        save_checkpoint(back, path2);
        std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), {});
        std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
        fs::remove(path2);
    }
    SUBCASE("corrupted magic raises Errc::bad_magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('Z');
        f.close();
        try {
            load_checkpoint(path);
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::bad_magic);
        }
        save_checkpoint(m, path); // restore for the next subcase
    }
    SUBCASE("truncated file raises Errc::truncated") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        const std::string cut = temp_file("cut");
        std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() - 7);
        try {
            load_checkpoint(cut);
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::truncated);
        }
        fs::remove(cut);
    }
    SUBCASE("shape-inconsistent header raises Errc::shape_inconsistent") {
        // Corrupt the first conv's out_channels (bytes 6+4+1+4+4 .. +4).
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        bytes[15] = static_cast<char>(99);
        const std::string bad = temp_file("badhdr");
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_AS(load_checkpoint(bad), Error);
        try {
            load_checkpoint(bad);
        } catch (const Error& e) {
            const bool structured =
                e.code() == Errc::shape_inconsistent || e.code() == Errc::truncated;
            CHECK(structured);
        }
        fs::remove(bad);
    }
    fs::remove(path);
}

TEST_CASE("five-layer checkpoint reports the oracle parameter count") {
    const std::string path = temp_file("full_ckpt");
    save_checkpoint(build_five_layer_network(3), path);
    const NetworkModel back = load_checkpoint(path);
    CHECK(back.parameter_count() == 2900170);
    fs::remove(path);
}

TEST_CASE("gradient checking") {
    SUBCASE("linear-only toy network is exact to 1e-8") {
        CHECK(gradient_check_linear(5) < 1e-8);
    }
    SUBCASE("full layer-kind coverage network stays under 1e-5") {
        CHECK(gradient_check(7) < 1e-5);
    }
    SUBCASE("corrupted backward is flagged with error ~2") {
        const double err = gradient_check(7, true);
        CHECK(err == doctest::Approx(2.0).epsilon(1e-6));
    }
}

TEST_CASE("inverted dropout preserves expectation") {
    // Average the dropout layer's train-mode output over many fresh masks;
    // it must match the eval-mode output (no masking, no scaling) within 2%.
    NetworkModel m;
    m.layers.push_back(LayerSpec::make_flatten());
    m.layers.push_back(LayerSpec::make_dropout(0.5f));
    m.weights.resize(2);
    m.biases.resize(2);
    Tensor batch({1, 4, 4, 1});
    Rng init(9);
    for (auto& v : batch.values()) v = static_cast<float>(init.next_range(0.5, 1.5));

    Rng rng(123);
    const Tensor eval_act = forward(m, batch, RunMode::eval, rng);
    REQUIRE(eval_act.shape() == std::vector<int>{1, 16});
    std::vector<double> mean(16, 0.0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const Tensor a = forward(m, batch, RunMode::train, rng);
        for (int j = 0; j < 16; ++j) mean[static_cast<std::size_t>(j)] += a(0, j);
    }
    for (int j = 0; j < 16; ++j) {
        mean[static_cast<std::size_t>(j)] /= n;
        CHECK(std::fabs(mean[static_cast<std::size_t>(j)] - eval_act(0, j)) /
                  eval_act(0, j) <
              0.02);
    }
}
