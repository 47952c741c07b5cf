// AVX2 float kernels. Lane layout mirrors the scalar reference exactly:
// vectors span independent output elements and every per-element reduction
// keeps the reference order, with separate mul and add (no FMA), so results
// are bit-identical to kernels_ref.hpp. Compiled with -mavx2 only; callers
// must gate on avx2_supported().

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include "foodrec/kernels.hpp"

namespace foodrec::kernels::avx2 {

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    const int h = input.extent(0), w = input.extent(1), cin = input.extent(2);
    const int k = kernels.extent(0), cout = kernels.extent(3);
    const int oh = h - k + 1, ow = w - k + 1;
    Tensor out({oh, ow, cout});
    const float* in = input.data();
    const float* kr = kernels.data();
    const float* bs = bias.data();
    float* o = out.data();
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            float* orow = o + (static_cast<std::size_t>(y) * ow + x) * cout;
            const float* ibase = in + (static_cast<std::size_t>(y) * w + x) * cin;
            int co = 0;
            // 32 output channels per pass, accumulators held in registers.
            for (; co + 32 <= cout; co += 32) {
                __m256 a0 = _mm256_loadu_ps(bs + co);
                __m256 a1 = _mm256_loadu_ps(bs + co + 8);
                __m256 a2 = _mm256_loadu_ps(bs + co + 16);
                __m256 a3 = _mm256_loadu_ps(bs + co + 24);
                for (int dy = 0; dy < k; ++dy) {
                    const float* irow = ibase + static_cast<std::size_t>(dy) * w * cin;
                    const float* krow =
                        kr + static_cast<std::size_t>(dy) * k * cin * cout + co;
                    for (int dx = 0; dx < k; ++dx) {
                        for (int ci = 0; ci < cin; ++ci) {
                            const __m256 vv = _mm256_set1_ps(irow[dx * cin + ci]);
                            const float* kk =
                                krow + (static_cast<std::size_t>(dx) * cin + ci) * cout;
                            a0 = _mm256_add_ps(a0, _mm256_mul_ps(vv, _mm256_loadu_ps(kk)));
                            a1 = _mm256_add_ps(a1, _mm256_mul_ps(vv, _mm256_loadu_ps(kk + 8)));
                            a2 = _mm256_add_ps(a2, _mm256_mul_ps(vv, _mm256_loadu_ps(kk + 16)));
                            a3 = _mm256_add_ps(a3, _mm256_mul_ps(vv, _mm256_loadu_ps(kk + 24)));
                        }
                    }
                }
                _mm256_storeu_ps(orow + co, a0);
                _mm256_storeu_ps(orow + co + 8, a1);
                _mm256_storeu_ps(orow + co + 16, a2);
                _mm256_storeu_ps(orow + co + 24, a3);
            }
            for (; co + 8 <= cout; co += 8) {
                __m256 acc = _mm256_loadu_ps(bs + co);
                for (int dy = 0; dy < k; ++dy) {
                    const float* irow = ibase + static_cast<std::size_t>(dy) * w * cin;
                    const float* krow =
                        kr + static_cast<std::size_t>(dy) * k * cin * cout + co;
                    for (int dx = 0; dx < k; ++dx) {
                        for (int ci = 0; ci < cin; ++ci) {
                            const __m256 vv = _mm256_set1_ps(irow[dx * cin + ci]);
                            acc = _mm256_add_ps(
                                acc, _mm256_mul_ps(
                                         vv, _mm256_loadu_ps(
                                                 krow + (static_cast<std::size_t>(dx) * cin + ci) *
                                                            cout)));
                        }
                    }
                }
                _mm256_storeu_ps(orow + co, acc);
            }
            for (; co < cout; ++co) {
                float acc = bs[co];
                for (int dy = 0; dy < k; ++dy) {
                    const float* irow = ibase + static_cast<std::size_t>(dy) * w * cin;
                    const float* krow = kr + static_cast<std::size_t>(dy) * k * cin * cout + co;
                    for (int dx = 0; dx < k; ++dx)
                        for (int ci = 0; ci < cin; ++ci)
                            acc += irow[dx * cin + ci] *
                                   krow[(static_cast<std::size_t>(dx) * cin + ci) * cout];
                }
                orow[co] = acc;
            }
        }
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& kernels, bool need_grad_input) {
    const int h = input.extent(0), w = input.extent(1), cin = input.extent(2);
    const int k = kernels.extent(0), cout = kernels.extent(3);
    const int oh = grad_out.extent(0), ow = grad_out.extent(1);
    Conv2dGrads grads;
    grads.input = Tensor({h, w, cin});
    grads.kernels = Tensor({k, k, cin, cout});
    grads.bias = Tensor({cout});
    const float* g = grad_out.data();
    const float* in = input.data();
    const int cv = cout & ~7;

    float* gb = grads.bias.data();
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const float* grow = g + (static_cast<std::size_t>(y) * ow + x) * cout;
            for (int co = 0; co < cv; co += 8) {
                __m256 acc = _mm256_loadu_ps(gb + co);
                _mm256_storeu_ps(gb + co, _mm256_add_ps(acc, _mm256_loadu_ps(grow + co)));
            }
            for (int co = cv; co < cout; ++co) gb[co] += grow[co];
        }
    }

    // For each kernel tap, sweep grad_out once with register accumulators.
    // Per-lane accumulation stays in ascending (y,x) order, matching the
    // scalar reference bit-for-bit.
    float* gk = grads.kernels.data();
    for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
            for (int ci = 0; ci < cin; ++ci) {
                float* gkk = gk + ((static_cast<std::size_t>(dy) * k + dx) * cin + ci) * cout;
                const float* icol =
                    in + (static_cast<std::size_t>(dy) * w + dx) * cin + ci;
                int co = 0;
                for (; co + 32 <= cout; co += 32) {
                    __m256 a0 = _mm256_setzero_ps();
                    __m256 a1 = _mm256_setzero_ps();
                    __m256 a2 = _mm256_setzero_ps();
                    __m256 a3 = _mm256_setzero_ps();
                    for (int y = 0; y < oh; ++y) {
                        const float* irow = icol + static_cast<std::size_t>(y) * w * cin;
                        const float* grow =
                            g + static_cast<std::size_t>(y) * ow * cout + co;
                        for (int x = 0; x < ow; ++x) {
                            const __m256 vv = _mm256_set1_ps(irow[x * cin]);
                            const float* gp = grow + static_cast<std::size_t>(x) * cout;
                            a0 = _mm256_add_ps(a0, _mm256_mul_ps(vv, _mm256_loadu_ps(gp)));
                            a1 = _mm256_add_ps(a1, _mm256_mul_ps(vv, _mm256_loadu_ps(gp + 8)));
                            a2 = _mm256_add_ps(a2, _mm256_mul_ps(vv, _mm256_loadu_ps(gp + 16)));
                            a3 = _mm256_add_ps(a3, _mm256_mul_ps(vv, _mm256_loadu_ps(gp + 24)));
                        }
                    }
                    _mm256_storeu_ps(gkk + co, a0);
                    _mm256_storeu_ps(gkk + co + 8, a1);
                    _mm256_storeu_ps(gkk + co + 16, a2);
                    _mm256_storeu_ps(gkk + co + 24, a3);
                }
                for (; co + 8 <= cout; co += 8) {
                    __m256 acc = _mm256_setzero_ps();
                    for (int y = 0; y < oh; ++y) {
                        const float* irow = icol + static_cast<std::size_t>(y) * w * cin;
                        const float* grow =
                            g + static_cast<std::size_t>(y) * ow * cout + co;
                        for (int x = 0; x < ow; ++x) {
                            const __m256 vv = _mm256_set1_ps(irow[x * cin]);
                            acc = _mm256_add_ps(
                                acc, _mm256_mul_ps(
                                         vv, _mm256_loadu_ps(
                                                 grow + static_cast<std::size_t>(x) * cout)));
                        }
                    }
                    _mm256_storeu_ps(gkk + co, acc);
                }
                for (; co < cout; ++co) {
                    float acc = 0.0f;
                    for (int y = 0; y < oh; ++y) {
                        const float* irow = icol + static_cast<std::size_t>(y) * w * cin;
                        const float* grow =
                            g + static_cast<std::size_t>(y) * ow * cout + co;
                        for (int x = 0; x < ow; ++x)
                            acc += irow[x * cin] * grow[static_cast<std::size_t>(x) * cout];
                    }
                    gkk[co] = acc;
                }
            }
        }
    }

    if (need_grad_input) {
        // Kernel transposed to (K,K,Cout,Cin) so the ci lanes load contiguously.
        // Pure data movement; per-lane accumulation order matches the reference.
        Tensor kt({k, k, cout, cin});
        {
            const float* kr = kernels.data();
            float* t = kt.data();
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx) {
                    const float* src = kr + (static_cast<std::size_t>(dy) * k + dx) * cin * cout;
                    float* dst = t + (static_cast<std::size_t>(dy) * k + dx) * cout * cin;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int co = 0; co < cout; ++co)
                            dst[static_cast<std::size_t>(co) * cin + ci] =
                                src[static_cast<std::size_t>(ci) * cout + co];
                }
        }
        float* gi = grads.input.data();
        const float* t = kt.data();
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const float* grow = g + (static_cast<std::size_t>(y) * ow + x) * cout;
                for (int dy = 0; dy < k; ++dy) {
                    float* girow = gi + (static_cast<std::size_t>(y + dy) * w + x) * cin;
                    for (int dx = 0; dx < k; ++dx) {
                        const float* kt0 =
                            t + (static_cast<std::size_t>(dy) * k + dx) * cout * cin;
                        float* gicol = girow + dx * cin;
                        int ci = 0;
                        for (; ci + 32 <= cin; ci += 32) {
                            __m256 a0 = _mm256_loadu_ps(gicol + ci);
                            __m256 a1 = _mm256_loadu_ps(gicol + ci + 8);
                            __m256 a2 = _mm256_loadu_ps(gicol + ci + 16);
                            __m256 a3 = _mm256_loadu_ps(gicol + ci + 24);
                            for (int co = 0; co < cout; ++co) {
                                const __m256 gvv = _mm256_set1_ps(grow[co]);
                                const float* kk =
                                    kt0 + static_cast<std::size_t>(co) * cin + ci;
                                a0 = _mm256_add_ps(a0, _mm256_mul_ps(gvv, _mm256_loadu_ps(kk)));
                                a1 = _mm256_add_ps(a1,
                                                   _mm256_mul_ps(gvv, _mm256_loadu_ps(kk + 8)));
                                a2 = _mm256_add_ps(a2,
                                                   _mm256_mul_ps(gvv, _mm256_loadu_ps(kk + 16)));
                                a3 = _mm256_add_ps(a3,
                                                   _mm256_mul_ps(gvv, _mm256_loadu_ps(kk + 24)));
                            }
                            _mm256_storeu_ps(gicol + ci, a0);
                            _mm256_storeu_ps(gicol + ci + 8, a1);
                            _mm256_storeu_ps(gicol + ci + 16, a2);
                            _mm256_storeu_ps(gicol + ci + 24, a3);
                        }
                        for (; ci + 8 <= cin; ci += 8) {
                            __m256 acc = _mm256_loadu_ps(gicol + ci);
                            for (int co = 0; co < cout; ++co) {
                                const __m256 gvv = _mm256_set1_ps(grow[co]);
                                acc = _mm256_add_ps(
                                    acc, _mm256_mul_ps(
                                             gvv, _mm256_loadu_ps(
                                                      kt0 + static_cast<std::size_t>(co) * cin +
                                                      ci)));
                            }
                            _mm256_storeu_ps(gicol + ci, acc);
                        }
                        for (; ci < cin; ++ci) {
                            float acc = gicol[ci];
                            for (int co = 0; co < cout; ++co)
                                acc += kt0[static_cast<std::size_t>(co) * cin + ci] * grow[co];
                            gicol[ci] = acc;
                        }
                    }
                }
            }
        }
    }
    return grads;
}

MaxPool2dOut maxpool2d_forward(const Tensor& input) {
    const int h = input.extent(0), w = input.extent(1), c = input.extent(2);
    const int oh = h / 2, ow = w / 2;
    MaxPool2dOut r;
    r.output = Tensor({oh, ow, c});
    r.argmax.resize(r.output.size());
    const float* in = input.data();
    float* o = r.output.data();
    std::int32_t* am = r.argmax.data();
    const int cvla = c & ~7;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const std::size_t base = (static_cast<std::size_t>(oy) * ow + ox) * c;
            const std::size_t i00 = (static_cast<std::size_t>(2 * oy) * w + 2 * ox) * c;
            const std::size_t i01 = i00 + static_cast<std::size_t>(c);
            const std::size_t i10 = i00 + static_cast<std::size_t>(w) * c;
            const std::size_t i11 = i10 + static_cast<std::size_t>(c);
            int ch = 0;
            for (; ch < cvla; ch += 8) {
                const __m256i lane = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
                __m256 best = _mm256_loadu_ps(in + i00 + ch);
                __m256i bidx = _mm256_add_epi32(
                    _mm256_set1_epi32(static_cast<int>(i00) + ch), lane);
                const std::size_t cand[3] = {i01, i10, i11};
                for (std::size_t ci = 0; ci < 3; ++ci) {
                    const __m256 v = _mm256_loadu_ps(in + cand[ci] + ch);
                    const __m256 gt = _mm256_cmp_ps(v, best, _CMP_GT_OQ); // strict: keep first max
                    best = _mm256_blendv_ps(best, v, gt);
                    const __m256i vi = _mm256_add_epi32(
                        _mm256_set1_epi32(static_cast<int>(cand[ci]) + ch), lane);
                    bidx = _mm256_castps_si256(_mm256_blendv_ps(
                        _mm256_castsi256_ps(bidx), _mm256_castsi256_ps(vi), gt));
                }
                _mm256_storeu_ps(o + base + ch, best);
                _mm256_storeu_si256(reinterpret_cast<__m256i*>(am + base + ch), bidx);
            }
            for (; ch < c; ++ch) {
                float best = in[i00 + ch];
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

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int m = a.extent(0), kk = a.extent(1), n = b.extent(1);
    Tensor out({m, n});
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const int nv = n & ~7;
    for (int i = 0; i < m; ++i) {
        float* orow = po + static_cast<std::size_t>(i) * n;
        const float* arow = pa + static_cast<std::size_t>(i) * kk;
        for (int k = 0; k < kk; ++k) {
            const float v = arow[k];
            const float* brow = pb + static_cast<std::size_t>(k) * n;
            const __m256 vv = _mm256_set1_ps(v);
            for (int j = 0; j < nv; j += 8) {
                __m256 acc = _mm256_loadu_ps(orow + j);
                acc = _mm256_add_ps(acc, _mm256_mul_ps(vv, _mm256_loadu_ps(brow + j)));
                _mm256_storeu_ps(orow + j, acc);
            }
            for (int j = nv; j < n; ++j) orow[j] += v * brow[j];
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    const int m = a.extent(0), ia = a.extent(1), n = b.extent(1);
    Tensor out({ia, n});
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const int nv = n & ~7;
    for (int r = 0; r < m; ++r) {
        const float* arow = pa + static_cast<std::size_t>(r) * ia;
        const float* brow = pb + static_cast<std::size_t>(r) * n;
        for (int i = 0; i < ia; ++i) {
            const float v = arow[i];
            float* orow = po + static_cast<std::size_t>(i) * n;
            const __m256 vv = _mm256_set1_ps(v);
            for (int j = 0; j < nv; j += 8) {
                __m256 acc = _mm256_loadu_ps(orow + j);
                acc = _mm256_add_ps(acc, _mm256_mul_ps(vv, _mm256_loadu_ps(brow + j)));
                _mm256_storeu_ps(orow + j, acc);
            }
            for (int j = nv; j < n; ++j) orow[j] += v * brow[j];
        }
    }
    return out;
}

void relu_forward(const float* x, float* y, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* x, const float* g, float* gx, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(gx + i, _mm256_and_ps(_mm256_loadu_ps(g + i), mask));
    }
    for (; i < n; ++i) gx[i] = x[i] > 0.0f ? g[i] : 0.0f;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 acc = _mm256_loadu_ps(y + i);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
        _mm256_storeu_ps(y + i, acc);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

} // namespace foodrec::kernels::avx2

#endif // x86_64
