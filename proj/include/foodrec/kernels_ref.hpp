#ifndef FOODREC_KERNELS_REF_HPP
#define FOODREC_KERNELS_REF_HPP

#include <cstdint>
#include <vector>

#include "foodrec/tensor.hpp"

// Scalar reference kernels. These define the numerical contract: the SIMD
// variants must produce bit-identical results, so every reduction here has a
// fixed, documented accumulation order and uses plain mul+add (no FMA).

namespace foodrec::kernels {

template <typename T>
struct Conv2dGradsT {
    TensorT<T> input;
    TensorT<T> kernels;
    TensorT<T> bias;
};

template <typename T>
struct MaxPool2dOutT {
    TensorT<T> output;
    std::vector<std::int32_t> argmax; // flat input index of each winner
};

namespace ref {

// out(y,x,co) = bias(co) + sum over (dy,dx,ci) ascending of
//   in(y+dy,x+dx,ci) * k(dy,dx,ci,co). Cross-correlation, stride 1, valid.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& kernels,
                          const TensorT<T>& bias) {
    const int h = input.extent(0), w = input.extent(1), cin = input.extent(2);
    const int k = kernels.extent(0), cout = kernels.extent(3);
    const int oh = h - k + 1, ow = w - k + 1;
    TensorT<T> out({oh, ow, cout});
    const T* in = input.data();
    const T* kr = kernels.data();
    const T* bs = bias.data();
    T* o = out.data();
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            T* orow = o + (static_cast<std::size_t>(y) * ow + x) * cout;
            for (int co = 0; co < cout; ++co) orow[co] = bs[co];
            for (int dy = 0; dy < k; ++dy) {
                const T* irow = in + (static_cast<std::size_t>(y + dy) * w + x) * cin;
                const T* krow = kr + static_cast<std::size_t>(dy) * k * cin * cout;
                for (int dx = 0; dx < k; ++dx) {
                    for (int ci = 0; ci < cin; ++ci) {
                        const T v = irow[dx * cin + ci];
                        const T* kk = krow + (static_cast<std::size_t>(dx) * cin + ci) * cout;
                        for (int co = 0; co < cout; ++co) orow[co] += v * kk[co];
                    }
                }
            }
        }
    }
    return out;
}

// grad_bias(co):    sum over (y,x) ascending of g(y,x,co).
// grad_kernels:     sum over (y,x) ascending of in(y+dy,x+dx,ci)*g(y,x,co).
// grad_input:       scatter over (y,x) ascending, then (dy,dx), then co
//                   ascending: gi(y+dy,x+dx,ci) += k(dy,dx,ci,co)*g(y,x,co).
template <typename T>
Conv2dGradsT<T> conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                                const TensorT<T>& kernels, bool need_grad_input) {
    const int h = input.extent(0), w = input.extent(1), cin = input.extent(2);
    const int k = kernels.extent(0), cout = kernels.extent(3);
    const int oh = grad_out.extent(0), ow = grad_out.extent(1);
    Conv2dGradsT<T> grads;
    grads.input = TensorT<T>({h, w, cin});
    grads.kernels = TensorT<T>({k, k, cin, cout});
    grads.bias = TensorT<T>({cout});
    const T* g = grad_out.data();
    const T* in = input.data();
    const T* kr = kernels.data();

    T* gb = grads.bias.data();
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const T* grow = g + (static_cast<std::size_t>(y) * ow + x) * cout;
            for (int co = 0; co < cout; ++co) gb[co] += grow[co];
        }

    T* gk = grads.kernels.data();
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const T* grow = g + (static_cast<std::size_t>(y) * ow + x) * cout;
            for (int dy = 0; dy < k; ++dy) {
                const T* irow = in + (static_cast<std::size_t>(y + dy) * w + x) * cin;
                for (int dx = 0; dx < k; ++dx) {
                    for (int ci = 0; ci < cin; ++ci) {
                        const T v = irow[dx * cin + ci];
                        T* gkk = gk + ((static_cast<std::size_t>(dy) * k + dx) * cin + ci) * cout;
                        for (int co = 0; co < cout; ++co) gkk[co] += v * grow[co];
                    }
                }
            }
        }
    }

    if (need_grad_input) {
        T* gi = grads.input.data();
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const T* grow = g + (static_cast<std::size_t>(y) * ow + x) * cout;
                for (int dy = 0; dy < k; ++dy) {
                    T* girow = gi + (static_cast<std::size_t>(y + dy) * w + x) * cin;
                    for (int dx = 0; dx < k; ++dx) {
                        const T* kk =
                            kr + ((static_cast<std::size_t>(dy) * k + dx) * cin) * cout;
                        for (int co = 0; co < cout; ++co) {
                            const T gv = grow[co];
                            for (int ci = 0; ci < cin; ++ci)
                                girow[dx * cin + ci] += kk[static_cast<std::size_t>(ci) * cout + co] * gv;
                        }
                    }
                }
            }
        }
    }
    return grads;
}

// 2x2 window, stride 2, trailing odd row/column dropped. Ties resolve to the
// smallest flat index; candidates are visited in flat-index order.
template <typename T>
MaxPool2dOutT<T> maxpool2d_forward(const TensorT<T>& input) {
    const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
    const int oh = h / 2, ow = w / 2;
    MaxPool2dOutT<T> r;
    r.output = TensorT<T>({oh, ow, c});
    r.argmax.resize(r.output.size());
    const T* in = input.data();
    T* o = r.output.data();
    std::int32_t* am = r.argmax.data();
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const std::size_t base = (static_cast<std::size_t>(oy) * ow + ox) * c;
            const std::size_t i00 = (static_cast<std::size_t>(2 * oy) * w + 2 * ox) * c;
            const std::size_t i01 = i00 + static_cast<std::size_t>(c);
            const std::size_t i10 = i00 + static_cast<std::size_t>(w) * c;
            const std::size_t i11 = i10 + static_cast<std::size_t>(c);
            for (int ch = 0; ch < c; ++ch) {
                T best = in[i00 + ch];
                std::size_t bi = i00 + ch;
                if (in[i01 + ch] > best) { best = in[i01 + ch]; bi = i01 + ch; }
                if (in[i10 + ch] > best) { best = in[i10 + ch]; bi = i10 + ch; }
                if (in[i11 + ch] > best) { best = in[i11 + ch]; bi = i11 + ch; }
                o[base + ch] = best;
                am[base + ch] = static_cast<std::int32_t>(bi);
            }
        }
    }
    return r;
}

template <typename T>
TensorT<T> maxpool2d_backward(const TensorT<T>& grad_out,
                              const std::vector<std::int32_t>& argmax,
                              const std::vector<int>& input_shape) {
    TensorT<T> gi(input_shape);
    const T* g = grad_out.data();
    T* out = gi.data();
    const std::size_t n = grad_out.size();
    for (std::size_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(argmax[i])] += g[i];
    return gi;
}

// out(m,n) = sum over k ascending of a(m,k)*b(k,n).
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const int m = a.extent(0), kk = a.extent(1), n = b.extent(1);
    TensorT<T> out({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int i = 0; i < m; ++i) {
        T* orow = po + static_cast<std::size_t>(i) * n;
        const T* arow = pa + static_cast<std::size_t>(i) * kk;
        for (int k = 0; k < kk; ++k) {
            const T v = arow[k];
            const T* brow = pb + static_cast<std::size_t>(k) * n;
            for (int j = 0; j < n; ++j) orow[j] += v * brow[j];
        }
    }
    return out;
}

// out(i,j) = sum over m ascending of a(m,i)*b(m,j)  (i.e. transpose(a)*b).
template <typename T>
TensorT<T> matmul_tn(const TensorT<T>& a, const TensorT<T>& b) {
    const int m = a.extent(0), ia = a.extent(1), n = b.extent(1);
    TensorT<T> out({ia, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int r = 0; r < m; ++r) {
        const T* arow = pa + static_cast<std::size_t>(r) * ia;
        const T* brow = pb + static_cast<std::size_t>(r) * n;
        for (int i = 0; i < ia; ++i) {
            const T v = arow[i];
            T* orow = po + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += v * brow[j];
        }
    }
    return out;
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
    const int m = a.extent(0), n = a.extent(1);
    TensorT<T> out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out(j, i) = a(i, j);
    return out;
}

template <typename T>
void relu_forward(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* g, T* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gx[i] = x[i] > T(0) ? g[i] : T(0);
}

// y += alpha * x, elementwise.
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

} // namespace ref
} // namespace foodrec::kernels

#endif
