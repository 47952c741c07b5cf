#include "foodrec/kernels.hpp"

#include <atomic>

#include "kernels_avx2.hpp"

namespace foodrec::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::auto_select};

bool detect_avx2() {
#if FOODREC_HAVE_AVX2_TU && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

bool use_avx2() {
    const Backend b = g_backend.load(std::memory_order_relaxed);
    if (b == Backend::scalar) return false;
    static const bool supported = detect_avx2();
    return supported;
}

} // namespace

bool avx2_supported() {
    static const bool supported = detect_avx2();
    return supported;
}

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

Backend configured_backend() { return g_backend.load(std::memory_order_relaxed); }

Backend active_backend() { return use_avx2() ? Backend::avx2 : Backend::scalar; }

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    validate_conv2d(input, kernels, bias);
#if FOODREC_HAVE_AVX2_TU
    if (use_avx2()) return avx2::conv2d_forward(input, kernels, bias);
#endif
    return ref::conv2d_forward(input, kernels, bias);
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& kernels, bool need_grad_input) {
    validate_conv2d_backward(grad_out, input, kernels);
#if FOODREC_HAVE_AVX2_TU
    if (use_avx2()) return avx2::conv2d_backward(grad_out, input, kernels, need_grad_input);
#endif
    return ref::conv2d_backward(grad_out, input, kernels, need_grad_input);
}

MaxPool2dOut maxpool2d_forward(const Tensor& input) {
    validate_maxpool(input);
#if FOODREC_HAVE_AVX2_TU
    if (use_avx2()) return avx2::maxpool2d_forward(input);
#endif
    return ref::maxpool2d_forward(input);
}

Tensor maxpool2d_backward(const Tensor& grad_out, const std::vector<std::int32_t>& argmax,
                          const std::vector<int>& input_shape) {
    validate_maxpool_backward(grad_out, argmax, input_shape);
    return ref::maxpool2d_backward(grad_out, argmax, input_shape);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    validate_matmul(a, b, false);
#if FOODREC_HAVE_AVX2_TU
    if (use_avx2()) return avx2::matmul(a, b);
#endif
    return ref::matmul(a, b);
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    validate_matmul(a, b, true);
#if FOODREC_HAVE_AVX2_TU
    if (use_avx2()) return avx2::matmul_tn(a, b);
#endif
    return ref::matmul_tn(a, b);
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) raise(Errc::shape_mismatch, "transpose2d needs rank 2");
    return ref::transpose2d(a);
}

void relu_forward(const Tensor& x, Tensor& y) {
    if (!x.same_shape(y)) raise(Errc::shape_mismatch, "relu shapes differ");
#if FOODREC_HAVE_AVX2_TU
    if (use_avx2()) { avx2::relu_forward(x.data(), y.data(), x.size()); return; }
#endif
    ref::relu_forward(x.data(), y.data(), x.size());
}

void relu_backward(const Tensor& x, const Tensor& g, Tensor& gx) {
    if (!x.same_shape(g) || !x.same_shape(gx))
        raise(Errc::shape_mismatch, "relu_backward shapes differ");
#if FOODREC_HAVE_AVX2_TU
    if (use_avx2()) { avx2::relu_backward(x.data(), g.data(), gx.data(), x.size()); return; }
#endif
    ref::relu_backward(x.data(), g.data(), gx.data(), x.size());
}

void axpy(float alpha, const Tensor& x, Tensor& y) {
    if (!x.same_shape(y)) raise(Errc::shape_mismatch, "axpy shapes differ");
#if FOODREC_HAVE_AVX2_TU
    if (use_avx2()) { avx2::axpy(alpha, x.data(), y.data(), x.size()); return; }
#endif
    ref::axpy(alpha, x.data(), y.data(), x.size());
}

// Double path: always the scalar reference.

TensorD conv2d_forward(const TensorD& input, const TensorD& kernels, const TensorD& bias) {
    validate_conv2d(input, kernels, bias);
    return ref::conv2d_forward(input, kernels, bias);
}

Conv2dGradsT<double> conv2d_backward(const TensorD& grad_out, const TensorD& input,
                                     const TensorD& kernels, bool need_grad_input) {
    validate_conv2d_backward(grad_out, input, kernels);
    return ref::conv2d_backward(grad_out, input, kernels, need_grad_input);
}

MaxPool2dOutT<double> maxpool2d_forward(const TensorD& input) {
    validate_maxpool(input);
    return ref::maxpool2d_forward(input);
}

TensorD maxpool2d_backward(const TensorD& grad_out, const std::vector<std::int32_t>& argmax,
                           const std::vector<int>& input_shape) {
    validate_maxpool_backward(grad_out, argmax, input_shape);
    return ref::maxpool2d_backward(grad_out, argmax, input_shape);
}

TensorD matmul(const TensorD& a, const TensorD& b) {
    validate_matmul(a, b, false);
    return ref::matmul(a, b);
}

TensorD matmul_tn(const TensorD& a, const TensorD& b) {
    validate_matmul(a, b, true);
    return ref::matmul_tn(a, b);
}

TensorD transpose2d(const TensorD& a) {
    if (a.rank() != 2) raise(Errc::shape_mismatch, "transpose2d needs rank 2");
    return ref::transpose2d(a);
}

} // namespace foodrec::kernels
