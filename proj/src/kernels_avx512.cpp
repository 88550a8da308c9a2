#include <immintrin.h>

#include "kernels_detail.hpp"
#include "kernels_lanes.hpp"

// AVX-512F lane. Map-style ops and matrix/conv forward / backward-input are
// elementwise across the batch axis, so 8-wide zmm arithmetic produces the
// same doubles as any narrower lane. Batch reductions (grad_params) are
// pinned to the 4-lane summation tree, so this lane reuses the AVX2 kernels
// for those.

namespace drivesac::kernels {

namespace {

void dense_forward512(const double* w, const double* bias, const double* x,
                      double* y, int O, int I, int B) {
  int b = 0;
  for (; b + 16 <= B; b += 16) {
    for (int o = 0; o < O; ++o) {
      __m512d a0 = _mm512_set1_pd(bias[o]), a1 = a0;
      const double* wo = w + (long)o * I;
      for (int i = 0; i < I; ++i) {
        const __m512d wv = _mm512_set1_pd(wo[i]);
        const double* xi = x + (long)i * B + b;
        a0 = _mm512_fmadd_pd(wv, _mm512_loadu_pd(xi), a0);
        a1 = _mm512_fmadd_pd(wv, _mm512_loadu_pd(xi + 8), a1);
      }
      double* yo = y + (long)o * B + b;
      _mm512_storeu_pd(yo, a0);
      _mm512_storeu_pd(yo + 8, a1);
    }
  }
  for (; b + 8 <= B; b += 8) {
    for (int o = 0; o < O; ++o) {
      __m512d acc = _mm512_set1_pd(bias[o]);
      const double* wo = w + (long)o * I;
      for (int i = 0; i < I; ++i)
        acc = _mm512_fmadd_pd(_mm512_set1_pd(wo[i]),
                              _mm512_loadu_pd(x + (long)i * B + b), acc);
      _mm512_storeu_pd(y + (long)o * B + b, acc);
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

void dense_backward_input512(const double* w, const double* gy, double* gx,
                             int O, int I, int B) {
  int b = 0;
  for (; b + 16 <= B; b += 16) {
    for (int i = 0; i < I; ++i) {
      __m512d a0 = _mm512_setzero_pd(), a1 = a0;
      for (int o = 0; o < O; ++o) {
        const __m512d wv = _mm512_set1_pd(w[(long)o * I + i]);
        const double* go = gy + (long)o * B + b;
        a0 = _mm512_fmadd_pd(wv, _mm512_loadu_pd(go), a0);
        a1 = _mm512_fmadd_pd(wv, _mm512_loadu_pd(go + 8), a1);
      }
      double* gi = gx + (long)i * B + b;
      _mm512_storeu_pd(gi, a0);
      _mm512_storeu_pd(gi + 8, a1);
    }
  }
  for (; b + 8 <= B; b += 8) {
    for (int i = 0; i < I; ++i) {
      __m512d acc = _mm512_setzero_pd();
      for (int o = 0; o < O; ++o)
        acc = _mm512_fmadd_pd(_mm512_set1_pd(w[(long)o * I + i]),
                              _mm512_loadu_pd(gy + (long)o * B + b), acc);
      _mm512_storeu_pd(gx + (long)i * B + b, acc);
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

void conv2d_forward512(const double* w, const double* bias, const double* x,
                       double* y, const ConvShape& s, int B) {
  const int HO = s.hout(), WO = s.wout();
  int b = 0;
  for (; b + 8 <= B; b += 8) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oh = 0; oh < HO; ++oh) {
        for (int ow = 0; ow < WO; ++ow) {
          __m512d acc = _mm512_set1_pd(bias[co]);
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int kh = 0; kh < s.k; ++kh) {
              const int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= s.hin) continue;
              for (int kw = 0; kw < s.k; ++kw) {
                const int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= s.win) continue;
                acc = _mm512_fmadd_pd(
                    _mm512_set1_pd(w[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw]),
                    _mm512_loadu_pd(x + (((long)ci * s.hin + ih) * s.win + iw) * B + b), acc);
              }
            }
          }
          _mm512_storeu_pd(y + (((long)co * HO + oh) * WO + ow) * B + b, acc);
        }
      }
    }
  }
  {
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
}

void conv2d_backward_input512(const double* w, const double* gy, double* gx,
                              const ConvShape& s, int B) {
  const int HO = s.hout(), WO = s.wout();
  const long n = (long)s.cin * s.hin * s.win * B;
  for (long j = 0; j < n; ++j) gx[j] = 0.0;
  int b = 0;
  for (; b + 8 <= B; b += 8) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oh = 0; oh < HO; ++oh) {
        for (int ow = 0; ow < WO; ++ow) {
          const __m512d gv = _mm512_loadu_pd(gy + (((long)co * HO + oh) * WO + ow) * B + b);
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int kh = 0; kh < s.k; ++kh) {
              const int ih = oh * s.stride - s.pad + kh;
              if (ih < 0 || ih >= s.hin) continue;
              for (int kw = 0; kw < s.k; ++kw) {
                const int iw = ow * s.stride - s.pad + kw;
                if (iw < 0 || iw >= s.win) continue;
                const __m512d wv =
                    _mm512_set1_pd(w[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw]);
                double* gi = gx + (((long)ci * s.hin + ih) * s.win + iw) * B + b;
                _mm512_storeu_pd(gi, _mm512_fmadd_pd(wv, gv, _mm512_loadu_pd(gi)));
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

void relu_forward512(const double* x, double* y, int n) {
  const __m512d zero = _mm512_setzero_pd();
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(y + i, _mm512_max_pd(_mm512_loadu_pd(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward512(const double* x, const double* gy, double* gx, int n) {
  const __m512d zero = _mm512_setzero_pd();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    const __mmask8 m = _mm512_cmp_pd_mask(_mm512_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm512_storeu_pd(gx + i, _mm512_maskz_mov_pd(m, _mm512_loadu_pd(gy + i)));
  }
  for (; i < n; ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
}

void add512(const double* a, const double* b, double* y, int n) {
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(y + i, _mm512_add_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void adam_step512(double* p, const double* g, double* m, double* v, int n,
                  double lr, double beta1, double beta2, double eps,
                  double bc1, double bc2) {
  const __m512d b1 = _mm512_set1_pd(beta1), ob1 = _mm512_set1_pd(1.0 - beta1);
  const __m512d b2 = _mm512_set1_pd(beta2), ob2 = _mm512_set1_pd(1.0 - beta2);
  const __m512d lrv = _mm512_set1_pd(lr), epsv = _mm512_set1_pd(eps);
  const __m512d bc1v = _mm512_set1_pd(bc1), bc2v = _mm512_set1_pd(bc2);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m512d gv = _mm512_loadu_pd(g + i);
    __m512d mv = _mm512_fmadd_pd(b1, _mm512_loadu_pd(m + i), _mm512_mul_pd(ob1, gv));
    __m512d vv = _mm512_fmadd_pd(b2, _mm512_loadu_pd(v + i),
                                 _mm512_mul_pd(ob2, _mm512_mul_pd(gv, gv)));
    _mm512_storeu_pd(m + i, mv);
    _mm512_storeu_pd(v + i, vv);
    const __m512d num = _mm512_mul_pd(lrv, _mm512_mul_pd(mv, bc1v));
    const __m512d den = _mm512_add_pd(_mm512_sqrt_pd(_mm512_mul_pd(vv, bc2v)), epsv);
    _mm512_storeu_pd(p + i, _mm512_sub_pd(_mm512_loadu_pd(p + i), _mm512_div_pd(num, den)));
  }
  for (; i < n; ++i) {
    m[i] = std::fma(beta1, m[i], (1.0 - beta1) * g[i]);
    v[i] = std::fma(beta2, v[i], (1.0 - beta2) * (g[i] * g[i]));
    p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
  }
}

void soft_update512(double* target, const double* online, double rho, int n) {
  const __m512d rv = _mm512_set1_pd(rho), orv = _mm512_set1_pd(1.0 - rho);
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(target + i,
                     _mm512_fmadd_pd(rv, _mm512_loadu_pd(target + i),
                                     _mm512_mul_pd(orv, _mm512_loadu_pd(online + i))));
  for (; i < n; ++i) target[i] = std::fma(rho, target[i], (1.0 - rho) * online[i]);
}

const Ops kAvx512Ops = {
    "avx512",
    &dense_forward512,
    &dense_backward_input512,
    &avx2_dense_grad_params,
    &conv2d_forward512,
    &conv2d_backward_input512,
    &avx2_conv2d_grad_params,
    &relu_forward512,
    &relu_backward512,
    &add512,
    &adam_step512,
    &soft_update512,
};

}  // namespace

const Ops* avx512_ops() { return &kAvx512Ops; }

}  // namespace drivesac::kernels
