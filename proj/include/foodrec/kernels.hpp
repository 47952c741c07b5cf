#ifndef FOODREC_KERNELS_HPP
#define FOODREC_KERNELS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "foodrec/kernels_ref.hpp"
#include "foodrec/tensor.hpp"

namespace foodrec::kernels {

using Conv2dGrads = Conv2dGradsT<float>;
using MaxPool2dOut = MaxPool2dOutT<float>;

/// Kernel implementation selection. `auto_select` picks AVX2 when the CPU
/// supports it. The AVX2 variants are bit-identical to the scalar reference.
enum class Backend { auto_select, scalar, avx2 };

bool avx2_supported();
void set_backend(Backend b);      // avx2 on unsupported hardware falls back to scalar
Backend configured_backend();     // what was requested
Backend active_backend();         // scalar or avx2, post-resolution

// ---- float path (dispatched) ----
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias);
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& kernels, bool need_grad_input = true);
MaxPool2dOut maxpool2d_forward(const Tensor& input);
Tensor maxpool2d_backward(const Tensor& grad_out, const std::vector<std::int32_t>& argmax,
                          const std::vector<int>& input_shape);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);
void relu_forward(const Tensor& x, Tensor& y);
void relu_backward(const Tensor& x, const Tensor& g, Tensor& gx);
void axpy(float alpha, const Tensor& x, Tensor& y);

// ---- double path (always the scalar reference; used by gradient checking) ----
TensorD conv2d_forward(const TensorD& input, const TensorD& kernels, const TensorD& bias);
Conv2dGradsT<double> conv2d_backward(const TensorD& grad_out, const TensorD& input,
                                     const TensorD& kernels, bool need_grad_input = true);
MaxPool2dOutT<double> maxpool2d_forward(const TensorD& input);
TensorD maxpool2d_backward(const TensorD& grad_out, const std::vector<std::int32_t>& argmax,
                           const std::vector<int>& input_shape);
TensorD matmul(const TensorD& a, const TensorD& b);
TensorD matmul_tn(const TensorD& a, const TensorD& b);
TensorD transpose2d(const TensorD& a);

// ---- shared shape validation ----
template <typename T>
void validate_conv2d(const TensorT<T>& input, const TensorT<T>& kernels,
                     const TensorT<T>& bias) {
    if (input.rank() != 3)
        raise(Errc::shape_mismatch, "conv2d input must be rank 3, got " + input.shape_string());
    if (kernels.rank() != 4)
        raise(Errc::shape_mismatch,
              "conv2d kernels must be rank 4 (K,K,Cin,Cout), got " + kernels.shape_string());
    if (kernels.extent(0) != kernels.extent(1))
        raise(Errc::shape_mismatch, "conv2d kernels must be square, got " + kernels.shape_string());
    if (input.extent(2) != kernels.extent(2))
        raise(Errc::shape_mismatch, "conv2d channel mismatch: input " + input.shape_string() +
                                        " vs kernels " + kernels.shape_string());
    if (bias.rank() != 1 || bias.extent(0) != kernels.extent(3))
        raise(Errc::shape_mismatch, "conv2d bias shape " + bias.shape_string() +
                                        " does not match kernels " + kernels.shape_string());
    if (input.extent(0) < kernels.extent(0) || input.extent(1) < kernels.extent(0))
        raise(Errc::shape_mismatch, "conv2d input " + input.shape_string() +
                                        " smaller than kernel " + kernels.shape_string());
}

template <typename T>
void validate_conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                              const TensorT<T>& kernels) {
    validate_conv2d(input, kernels, TensorT<T>({kernels.extent(3)}));
    const int oh = input.extent(0) - kernels.extent(0) + 1;
    const int ow = input.extent(1) - kernels.extent(0) + 1;
    if (grad_out.rank() != 3 || grad_out.extent(0) != oh || grad_out.extent(1) != ow ||
        grad_out.extent(2) != kernels.extent(3))
        raise(Errc::shape_mismatch, "conv2d grad_out " + grad_out.shape_string() +
                                        " inconsistent with forward output");
}

template <typename T>
void validate_maxpool(const TensorT<T>& input) {
    if (input.rank() != 3)
        raise(Errc::shape_mismatch, "maxpool input must be rank 3, got " + input.shape_string());
    if (input.extent(0) < 2 || input.extent(1) < 2)
        raise(Errc::shape_mismatch,
              "maxpool needs spatial extents >= 2, got " + input.shape_string());
}

template <typename T>
void validate_maxpool_backward(const TensorT<T>& grad_out,
                               const std::vector<std::int32_t>& argmax,
                               const std::vector<int>& input_shape) {
    if (input_shape.size() != 3)
        raise(Errc::shape_mismatch, "maxpool input_shape must be rank 3");
    if (argmax.size() != grad_out.size())
        raise(Errc::shape_mismatch, "maxpool argmax size does not match grad_out");
    std::size_t n = 1;
    for (int e : input_shape) n *= static_cast<std::size_t>(e);
    for (std::int32_t idx : argmax)
        if (idx < 0 || static_cast<std::size_t>(idx) >= n)
            raise(Errc::out_of_range, "maxpool argmax index " + std::to_string(idx) +
                                          " out of range for input of " + std::to_string(n) +
                                          " elements");
}

template <typename T>
void validate_matmul(const TensorT<T>& a, const TensorT<T>& b, bool transpose_a) {
    if (a.rank() != 2 || b.rank() != 2)
        raise(Errc::shape_mismatch, "matmul operands must be rank 2");
    const int inner_a = transpose_a ? a.extent(0) : a.extent(1);
    if (inner_a != b.extent(0))
        raise(Errc::shape_mismatch, "matmul inner extents differ: " + a.shape_string() + " x " +
                                        b.shape_string());
}

} // namespace foodrec::kernels

#endif
