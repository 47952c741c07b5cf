// The AVX2 kernels must be bit-identical to the scalar reference: vector
// lanes map to independent outputs and each per-element reduction keeps the
// reference order with plain mul+add. These tests compare raw float bits.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "foodrec/kernels.hpp"
#include "foodrec/rng.hpp"

using namespace foodrec;
namespace K = foodrec::kernels;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<float>(rng.next_range(-1.0, 1.0));
    return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

struct BackendGuard {
    ~BackendGuard() { K::set_backend(K::Backend::auto_select); }
};

template <typename Fn>
auto with_backend(K::Backend b, Fn&& fn) {
    K::set_backend(b);
    auto r = fn();
    K::set_backend(K::Backend::auto_select);
    return r;
}

} // namespace

TEST_CASE("scalar and avx2 kernels agree bit-for-bit") {
    if (!K::avx2_supported()) {
        MESSAGE("avx2 not available on this host; dispatch stays on the scalar reference");
        CHECK(K::active_backend() == K::Backend::scalar);
        return;
    }
    BackendGuard guard;
    Rng rng(2024);

    // Channel counts straddle the 8-lane width to exercise remainders.
    const int couts[] = {1, 3, 5, 8, 9, 24, 32};
    for (int cout : couts) {
        const int cin = 1 + static_cast<int>(rng.next_index(9));
        const int k = 1 + 2 * static_cast<int>(rng.next_index(3));
        const int h = k + 1 + static_cast<int>(rng.next_index(8));
        const int w = k + 1 + static_cast<int>(rng.next_index(8));
        CAPTURE(cout);
        CAPTURE(cin);
        CAPTURE(k);

        const Tensor in = random_tensor({h, w, cin}, rng);
        const Tensor ker = random_tensor({k, k, cin, cout}, rng);
        const Tensor bias = random_tensor({cout}, rng);

        const Tensor fwd_s =
            with_backend(K::Backend::scalar, [&] { return K::conv2d_forward(in, ker, bias); });
        const Tensor fwd_v =
            with_backend(K::Backend::avx2, [&] { return K::conv2d_forward(in, ker, bias); });
        CHECK(bit_equal(fwd_s, fwd_v));

        const Tensor gout = random_tensor(fwd_s.shape(), rng);
        const auto bwd_s = with_backend(K::Backend::scalar,
                                        [&] { return K::conv2d_backward(gout, in, ker); });
        const auto bwd_v =
            with_backend(K::Backend::avx2, [&] { return K::conv2d_backward(gout, in, ker); });
        CHECK(bit_equal(bwd_s.input, bwd_v.input));
        CHECK(bit_equal(bwd_s.kernels, bwd_v.kernels));
        CHECK(bit_equal(bwd_s.bias, bwd_v.bias));
    }
}

TEST_CASE("scalar and avx2 maxpool agree including argmax") {
    if (!K::avx2_supported()) return;
    BackendGuard guard;
    Rng rng(7);
    const int channels[] = {1, 3, 8, 11, 16};
    for (int c : channels) {
        Tensor in = random_tensor({9, 7, c}, rng);
        // Inject exact ties inside some windows to exercise the tie rule.
        in(0, 1, 0) = in(0, 0, 0);
        in(1, 0, c - 1) = in(0, 0, c - 1);
        const auto s = with_backend(K::Backend::scalar, [&] { return K::maxpool2d_forward(in); });
        const auto v = with_backend(K::Backend::avx2, [&] { return K::maxpool2d_forward(in); });
        CHECK(bit_equal(s.output, v.output));
        CHECK(s.argmax == v.argmax);
    }
}

TEST_CASE("scalar and avx2 matmul / matmul_tn agree bit-for-bit") {
    if (!K::avx2_supported()) return;
    BackendGuard guard;
    Rng rng(11);
    const int ns[] = {1, 2, 7, 8, 9, 30};
    for (int n : ns) {
        const int m = 1 + static_cast<int>(rng.next_index(7));
        const int kk = 1 + static_cast<int>(rng.next_index(9));
        const Tensor a = random_tensor({m, kk}, rng);
        const Tensor b = random_tensor({kk, n}, rng);
        const Tensor s = with_backend(K::Backend::scalar, [&] { return K::matmul(a, b); });
        const Tensor v = with_backend(K::Backend::avx2, [&] { return K::matmul(a, b); });
        CHECK(bit_equal(s, v));

        const Tensor at = random_tensor({kk, m}, rng);
        const Tensor s2 = with_backend(K::Backend::scalar, [&] { return K::matmul_tn(at, b); });
        const Tensor v2 = with_backend(K::Backend::avx2, [&] { return K::matmul_tn(at, b); });
        CHECK(bit_equal(s2, v2));
    }
}

TEST_CASE("scalar and avx2 elementwise kernels agree bit-for-bit") {
    if (!K::avx2_supported()) return;
    BackendGuard guard;
    Rng rng(13);
    for (int n : {1, 5, 8, 13, 64, 100}) {
        const Tensor x = random_tensor({n}, rng);
        const Tensor g = random_tensor({n}, rng);

        Tensor ys(x.shape()), yv(x.shape());
        with_backend(K::Backend::scalar, [&] { K::relu_forward(x, ys); return 0; });
        with_backend(K::Backend::avx2, [&] { K::relu_forward(x, yv); return 0; });
        CHECK(bit_equal(ys, yv));

        Tensor gs(x.shape()), gv(x.shape());
        with_backend(K::Backend::scalar, [&] { K::relu_backward(x, g, gs); return 0; });
        with_backend(K::Backend::avx2, [&] { K::relu_backward(x, g, gv); return 0; });
        CHECK(bit_equal(gs, gv));

        Tensor as = random_tensor({n}, rng);
        Tensor av = as;
        with_backend(K::Backend::scalar, [&] { K::axpy(0.37f, x, as); return 0; });
        with_backend(K::Backend::avx2, [&] { K::axpy(0.37f, x, av); return 0; });
        CHECK(bit_equal(as, av));
    }
}

TEST_CASE("backend selection reports what actually runs") {
    BackendGuard guard;
    K::set_backend(K::Backend::scalar);
    CHECK(K::active_backend() == K::Backend::scalar);
    K::set_backend(K::Backend::auto_select);
    if (K::avx2_supported())
        CHECK(K::active_backend() == K::Backend::avx2);
    else
        CHECK(K::active_backend() == K::Backend::scalar);
}
