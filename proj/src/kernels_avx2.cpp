#include <immintrin.h>

#include "kernels_detail.hpp"

// AVX2+FMA lane. Vector width only changes how many batch elements move
// together; per-element accumulation order matches the scalar reference, and
// batch reductions keep the b%4 lane rule via a single ymm accumulator chain.

namespace drivesac::kernels {

namespace {
using detail::Acc4;

inline double hsum_lanes(__m256d a) {
  // (l0 + l2) + (l1 + l3), the Acc4 combine order
  __m128d lo = _mm256_castpd256_pd128(a);
  __m128d hi = _mm256_extractf128_pd(a, 1);
  __m128d s = _mm_add_pd(lo, hi);                       // [l0+l2, l1+l3]
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}
}  // namespace

void avx2_dense_forward(const double* w, const double* bias, const double* x,
                        double* y, int O, int I, int B) {
  int b = 0;
  for (; b + 16 <= B; b += 16) {
    for (int o = 0; o < O; ++o) {
      __m256d a0 = _mm256_set1_pd(bias[o]), a1 = a0, a2 = a0, a3 = a0;
      const double* wo = w + (long)o * I;
      for (int i = 0; i < I; ++i) {
        const __m256d wv = _mm256_set1_pd(wo[i]);
        const double* xi = x + (long)i * B + b;
        a0 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(xi), a0);
        a1 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(xi + 4), a1);
        a2 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(xi + 8), a2);
        a3 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(xi + 12), a3);
      }
      double* yo = y + (long)o * B + b;
      _mm256_storeu_pd(yo, a0);
      _mm256_storeu_pd(yo + 4, a1);
      _mm256_storeu_pd(yo + 8, a2);
      _mm256_storeu_pd(yo + 12, a3);
    }
  }
  for (; b + 4 <= B; b += 4) {
    for (int o = 0; o < O; ++o) {
      __m256d acc = _mm256_set1_pd(bias[o]);
      const double* wo = w + (long)o * I;
      for (int i = 0; i < I; ++i)
        acc = _mm256_fmadd_pd(_mm256_set1_pd(wo[i]),
                              _mm256_loadu_pd(x + (long)i * B + b), acc);
      _mm256_storeu_pd(y + (long)o * B + b, acc);
    }
  }
  for (; b < B; ++b) {
    for (int o = 0; o < O; ++o) {
      double acc = bias[o];
      const double* wo = w + (long)o * I;
      for (int i = 0; i < I; ++i) acc = std::fma(wo[i], x[(long)i * B + b], acc);
      y[(long)o * B + b] = acc;
    }
  }
}

void avx2_dense_backward_input(const double* w, const double* gy, double* gx,
                               int O, int I, int B) {
  int b = 0;
  for (; b + 16 <= B; b += 16) {
    for (int i = 0; i < I; ++i) {
      __m256d a0 = _mm256_setzero_pd(), a1 = a0, a2 = a0, a3 = a0;
      for (int o = 0; o < O; ++o) {
        const __m256d wv = _mm256_set1_pd(w[(long)o * I + i]);
        const double* go = gy + (long)o * B + b;
        a0 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(go), a0);
        a1 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(go + 4), a1);
        a2 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(go + 8), a2);
        a3 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(go + 12), a3);
      }
      double* gi = gx + (long)i * B + b;
      _mm256_storeu_pd(gi, a0);
      _mm256_storeu_pd(gi + 4, a1);
      _mm256_storeu_pd(gi + 8, a2);
      _mm256_storeu_pd(gi + 12, a3);
    }
  }
  for (; b + 4 <= B; b += 4) {
    for (int i = 0; i < I; ++i) {
      __m256d acc = _mm256_setzero_pd();
      for (int o = 0; o < O; ++o)
        acc = _mm256_fmadd_pd(_mm256_set1_pd(w[(long)o * I + i]),
                              _mm256_loadu_pd(gy + (long)o * B + b), acc);
      _mm256_storeu_pd(gx + (long)i * B + b, acc);
    }
  }
  for (; b < B; ++b) {
    for (int i = 0; i < I; ++i) {
      double acc = 0.0;
      for (int o = 0; o < O; ++o) acc = std::fma(w[(long)o * I + i], gy[(long)o * B + b], acc);
      gx[(long)i * B + b] = acc;
    }
  }
}

void avx2_dense_grad_params(const double* x, const double* gy, double* gw,
                            double* gb, int O, int I, int B) {
  if (B % 4 != 0) {
    detail::dense_grad_params_ref(x, gy, gw, gb, O, I, B);
    return;
  }
  for (int o = 0; o < O; ++o) {
    const double* go = gy + (long)o * B;
    int i = 0;
    for (; i + 2 <= I; i += 2) {   // two independent accumulator chains
      const double* x0 = x + (long)i * B;
      const double* x1 = x + (long)(i + 1) * B;
      __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
      for (int b = 0; b < B; b += 4) {
        const __m256d gv = _mm256_loadu_pd(go + b);
        c0 = _mm256_fmadd_pd(gv, _mm256_loadu_pd(x0 + b), c0);
        c1 = _mm256_fmadd_pd(gv, _mm256_loadu_pd(x1 + b), c1);
      }
      gw[(long)o * I + i] = hsum_lanes(c0);
      gw[(long)o * I + i + 1] = hsum_lanes(c1);
    }
    for (; i < I; ++i) {
      const double* xi = x + (long)i * B;
      __m256d acc = _mm256_setzero_pd();
      for (int b = 0; b < B; b += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(go + b), _mm256_loadu_pd(xi + b), acc);
      gw[(long)o * I + i] = hsum_lanes(acc);
    }
    __m256d acc = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    for (int b = 0; b < B; b += 4)
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(go + b), one, acc);
    gb[o] = hsum_lanes(acc);
  }
}

void avx2_conv2d_forward(const double* w, const double* bias, const double* x,
                         double* y, const ConvShape& s, int B) {
  const int HO = s.hout(), WO = s.wout();
  int b = 0;
  for (; b + 16 <= B; b += 16) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oh = 0; oh < HO; ++oh) {
        const int ihb = oh * s.stride - s.pad;
        for (int ow = 0; ow < WO; ++ow) {
          const int iwb = ow * s.stride - s.pad;
          __m256d a0 = _mm256_set1_pd(bias[co]), a1 = a0, a2 = a0, a3 = a0;
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int kh = 0; kh < s.k; ++kh) {
              const int ih = ihb + kh;
              if (ih < 0 || ih >= s.hin) continue;
              for (int kw = 0; kw < s.k; ++kw) {
                const int iw = iwb + kw;
                if (iw < 0 || iw >= s.win) continue;
                const __m256d wv =
                    _mm256_set1_pd(w[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw]);
                const double* xi = x + (((long)ci * s.hin + ih) * s.win + iw) * B + b;
                a0 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(xi), a0);
                a1 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(xi + 4), a1);
                a2 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(xi + 8), a2);
                a3 = _mm256_fmadd_pd(wv, _mm256_loadu_pd(xi + 12), a3);
              }
            }
          }
          double* yo = y + (((long)co * HO + oh) * WO + ow) * B + b;
          _mm256_storeu_pd(yo, a0);
          _mm256_storeu_pd(yo + 4, a1);
          _mm256_storeu_pd(yo + 8, a2);
          _mm256_storeu_pd(yo + 12, a3);
        }
      }
    }
  }
  for (; b + 4 <= B; b += 4) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oh = 0; oh < HO; ++oh) {
        for (int ow = 0; ow < WO; ++ow) {
          __m256d acc = _mm256_set1_pd(bias[co]);
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int kh = 0; kh < s.k; ++kh) {
              const int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= s.hin) continue;
              for (int kw = 0; kw < s.k; ++kw) {
                const int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= s.win) continue;
                acc = _mm256_fmadd_pd(
                    _mm256_set1_pd(w[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw]),
                    _mm256_loadu_pd(x + (((long)ci * s.hin + ih) * s.win + iw) * B + b), acc);
              }
            }
          }
          _mm256_storeu_pd(y + (((long)co * HO + oh) * WO + ow) * B + b, acc);
        }
      }
    }
  }
  for (; b < B; ++b) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oh = 0; oh < HO; ++oh) {
        for (int ow = 0; ow < WO; ++ow) {
          double acc = bias[co];
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int kh = 0; kh < s.k; ++kh) {
              const int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= s.hin) continue;
              for (int kw = 0; kw < s.k; ++kw) {
                const int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= s.win) continue;
                acc = std::fma(w[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw],
                               x[(((long)ci * s.hin + ih) * s.win + iw) * B + b], acc);
              }
            }
          }
          y[(((long)co * HO + oh) * WO + ow) * B + b] = acc;
        }
      }
    }
  }
}

void avx2_conv2d_backward_input(const double* w, const double* gy, double* gx,
                                const ConvShape& s, int B) {
  const int HO = s.hout(), WO = s.wout();
  const long n = (long)s.cin * s.hin * s.win * B;
  for (long j = 0; j < n; ++j) gx[j] = 0.0;
  int b = 0;
  for (; b + 4 <= B; b += 4) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oh = 0; oh < HO; ++oh) {
        for (int ow = 0; ow < WO; ++ow) {
          const __m256d gv = _mm256_loadu_pd(gy + (((long)co * HO + oh) * WO + ow) * B + b);
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int kh = 0; kh < s.k; ++kh) {
              const int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= s.hin) continue;
              for (int kw = 0; kw < s.k; ++kw) {
                const int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= s.win) continue;
                const __m256d wv =
                    _mm256_set1_pd(w[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw]);
                double* gi = gx + (((long)ci * s.hin + ih) * s.win + iw) * B + b;
                _mm256_storeu_pd(gi, _mm256_fmadd_pd(wv, gv, _mm256_loadu_pd(gi)));
              }
            }
          }
        }
      }
    }
  }
  for (; b < B; ++b) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oh = 0; oh < HO; ++oh) {
        for (int ow = 0; ow < WO; ++ow) {
          const double gv = gy[(((long)co * HO + oh) * WO + ow) * B + b];
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int kh = 0; kh < s.k; ++kh) {
              const int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= s.hin) continue;
              for (int kw = 0; kw < s.k; ++kw) {
                const int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= s.win) continue;
                double* gi = gx + (((long)ci * s.hin + ih) * s.win + iw) * B + b;
                *gi = std::fma(w[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw], gv, *gi);
              }
            }
          }
        }
      }
    }
  }
}

void avx2_conv2d_grad_params(const double* x, const double* gy, double* gw,
                             double* gb, const ConvShape& s, int B) {
  if (B % 4 != 0) {
    detail::conv2d_grad_params_ref(x, gy, gw, gb, s, B);
    return;
  }
  const int HO = s.hout(), WO = s.wout();
  for (int co = 0; co < s.cout; ++co) {
    for (int ci = 0; ci < s.cin; ++ci) {
      for (int kh = 0; kh < s.k; ++kh) {
        for (int kw = 0; kw < s.k; ++kw) {
          __m256d acc = _mm256_setzero_pd();
          for (int oh = 0; oh < HO; ++oh) {
            const int ih = oh * s.stride - s.pad + kh;
            if (ih < 0 || ih >= s.hin) continue;
            for (int ow = 0; ow < WO; ++ow) {
              const int iw = ow * s.stride - s.pad + kw;
              if (iw < 0 || iw >= s.win) continue;
              const double* go = gy + (((long)co * HO + oh) * WO + ow) * B;
              const double* xi = x + (((long)ci * s.hin + ih) * s.win + iw) * B;
              for (int b = 0; b < B; b += 4)
                acc = _mm256_fmadd_pd(_mm256_loadu_pd(go + b), _mm256_loadu_pd(xi + b), acc);
            }
          }
          gw[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw] = hsum_lanes(acc);
        }
      }
    }
    __m256d acc = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    const double* gc = gy + (long)co * HO * WO * B;
    for (long j = 0; j < (long)HO * WO * B; j += 4)
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(gc + j), one, acc);
    gb[co] = hsum_lanes(acc);
  }
}

void avx2_relu_forward(const double* x, double* y, int n) {
  const __m256d zero = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void avx2_relu_backward(const double* x, const double* gy, double* gx, int n) {
  const __m256d zero = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(gx + i, _mm256_and_pd(mask, _mm256_loadu_pd(gy + i)));
  }
  for (; i < n; ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
}

void avx2_add(const double* a, const double* b, double* y, int n) {
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void avx2_adam_step(double* p, const double* g, double* m, double* v, int n,
                    double lr, double beta1, double beta2, double eps,
                    double bc1, double bc2) {
  const __m256d b1 = _mm256_set1_pd(beta1), ob1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d b2 = _mm256_set1_pd(beta2), ob2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d lrv = _mm256_set1_pd(lr), epsv = _mm256_set1_pd(eps);
  const __m256d bc1v = _mm256_set1_pd(bc1), bc2v = _mm256_set1_pd(bc2);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    __m256d mv = _mm256_fmadd_pd(b1, _mm256_loadu_pd(m + i), _mm256_mul_pd(ob1, gv));
    __m256d vv = _mm256_fmadd_pd(b2, _mm256_loadu_pd(v + i),
                                 _mm256_mul_pd(ob2, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d num = _mm256_mul_pd(lrv, _mm256_mul_pd(mv, bc1v));
    const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vv, bc2v)), epsv);
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), _mm256_div_pd(num, den)));
  }
  for (; i < n; ++i) {
    m[i] = std::fma(beta1, m[i], (1.0 - beta1) * g[i]);
    v[i] = std::fma(beta2, v[i], (1.0 - beta2) * (g[i] * g[i]));
    p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
  }
}

void avx2_soft_update(double* target, const double* online, double rho, int n) {
  const __m256d rv = _mm256_set1_pd(rho), orv = _mm256_set1_pd(1.0 - rho);
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(target + i,
                     _mm256_fmadd_pd(rv, _mm256_loadu_pd(target + i),
                                     _mm256_mul_pd(orv, _mm256_loadu_pd(online + i))));
  for (; i < n; ++i) target[i] = std::fma(rho, target[i], (1.0 - rho) * online[i]);
}

namespace {
const Ops kAvx2Ops = {
    "avx2",
    &avx2_dense_forward,
    &avx2_dense_backward_input,
    &avx2_dense_grad_params,
    &avx2_conv2d_forward,
    &avx2_conv2d_backward_input,
    &avx2_conv2d_grad_params,
    &avx2_relu_forward,
    &avx2_relu_backward,
    &avx2_add,
    &avx2_adam_step,
    &avx2_soft_update,
};
}  // namespace

const Ops* avx2_ops() { return &kAvx2Ops; }

}  // namespace drivesac::kernels
