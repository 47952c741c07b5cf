#ifndef FOODREC_SRC_KERNELS_AVX2_HPP
#define FOODREC_SRC_KERNELS_AVX2_HPP

// Internal: AVX2 kernel entry points, defined in kernels_avx2.cpp on x86_64.

#include "foodrec/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define FOODREC_HAVE_AVX2_TU 1

namespace foodrec::kernels::avx2 {

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias);
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& kernels, bool need_grad_input);
MaxPool2dOut maxpool2d_forward(const Tensor& input);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
void relu_forward(const float* x, float* y, std::size_t n);
void relu_backward(const float* x, const float* g, float* gx, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);

} // namespace foodrec::kernels::avx2

#else
#define FOODREC_HAVE_AVX2_TU 0
#endif

#endif
