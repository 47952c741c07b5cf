#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "foodrec/rng.hpp"
#include "foodrec/tensor.hpp"

using namespace foodrec;

TEST_CASE("splitmix64 reference sequence") {
    Rng rng(0);
    // Frozen from the splitmix64 reference stream for seed 0.
    CHECK(rng.next_u64() == 0xE220A8397B1DCDAFULL);
    CHECK(rng.next_u64() == 0x6E789E6AA1B965F4ULL);
    CHECK(rng.next_u64() == 0x06C45D188009454FULL);
}

TEST_CASE("same seed gives identical sequences") {
    Rng a(12345), b(12345);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(12345), d(54321);
    bool differs = false;
    for (int i = 0; i < 10; ++i) differs |= c.next_u64() != d.next_u64();
    CHECK(differs);
}

TEST_CASE("uniform doubles live in [0,1) with mean near 1/2") {
    Rng rng(7);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.next_double();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    const double mean = sum / n;
    CHECK(mean > 0.49);
    CHECK(mean < 0.51);
}

TEST_CASE("rng_uniform returns the advanced generator") {
    Rng rng(99);
    auto [advanced, values] = rng_uniform(rng, 5);
    REQUIRE(values.size() == 5);
    Rng manual(99);
    for (double v : values) CHECK(v == manual.next_double());
    CHECK(advanced.state() == manual.state());
    CHECK(advanced.next_u64() == manual.next_u64());
}

TEST_CASE("normal draws are deterministic and roughly standard") {
    Rng a(3), b(3);
    for (int i = 0; i < 10; ++i) CHECK(a.next_normal() == b.next_normal());
    Rng rng(11);
    double sum = 0.0, sum2 = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.next_normal();
        sum += x;
        sum2 += x * x;
    }
    CHECK(std::fabs(sum / n) < 0.02);
    CHECK(std::fabs(sum2 / n - 1.0) < 0.03);
}

TEST_CASE("tensor row-major indexing") {
    Tensor t({2, 3, 4});
    REQUIRE(t.size() == 24);
    float v = 0.0f;
    for (auto& x : t.values()) x = v++;
    // (y,x,c) lives at ((y*W)+x)*C+c
    CHECK(t(1, 2, 3) == doctest::Approx(((1 * 3) + 2) * 4 + 3));
    CHECK(t(0, 0, 0) == 0.0f);
    CHECK(t(1, 0, 0) == 12.0f);
}

TEST_CASE("tensor shape/data mismatch raises") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), Error);
    try {
        Tensor t({2, 2}, {1.0f, 2.0f, 3.0f});
    } catch (const Error& e) {
        CHECK(e.code() == Errc::shape_mismatch);
    }
    CHECK_THROWS_AS(Tensor({0, 3}), Error);
}

TEST_CASE("tensor reshape preserves data and checks size") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor r = t.reshaped({3, 2});
    CHECK(r(2, 1) == 6.0f);
    CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
}

TEST_CASE("shuffle is deterministic per seed") {
    std::vector<int> a{0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<int> b = a;
    Rng r1(5), r2(5);
    r1.shuffle(a);
    r2.shuffle(b);
    CHECK(a == b);
}
