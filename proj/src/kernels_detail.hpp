#pragma once

#include <cmath>

#include "drivesac/kernels.hpp"

// Reference bodies for every kernel. kernels_scalar.cpp exports these directly;
// the SIMD translation units reuse them for remainder lanes so that every path
// realizes the exact semantics documented in kernels.hpp.

namespace drivesac::kernels::detail {

inline void dense_forward_ref(const double* w, const double* bias, const double* x,
                              double* y, int O, int I, int B) {
  for (int o = 0; o < O; ++o) {
    double* yo = y + (long)o * B;
    for (int b = 0; b < B; ++b) yo[b] = bias[o];
    const double* wo = w + (long)o * I;
    for (int i = 0; i < I; ++i) {
      const double wi = wo[i];
      const double* xi = x + (long)i * B;
      for (int b = 0; b < B; ++b) yo[b] = std::fma(wi, xi[b], yo[b]);
    }
  }
}

inline void dense_backward_input_ref(const double* w, const double* gy, double* gx,
                                     int O, int I, int B) {
  for (int i = 0; i < I; ++i) {
    double* gi = gx + (long)i * B;
    for (int b = 0; b < B; ++b) gi[b] = 0.0;
    for (int o = 0; o < O; ++o) {
      const double wi = w[(long)o * I + i];
      const double* go = gy + (long)o * B;
      for (int b = 0; b < B; ++b) gi[b] = std::fma(wi, go[b], gi[b]);
    }
  }
}

// Four interleaved partial sums keyed by b % 4, combined as (s0+s2)+(s1+s3).
struct Acc4 {
  double s[4] = {0.0, 0.0, 0.0, 0.0};
  void add(int lane, double a, double b) { s[lane] = std::fma(a, b, s[lane]); }
  double total() const { return (s[0] + s[2]) + (s[1] + s[3]); }
};

inline void dense_grad_params_ref(const double* x, const double* gy, double* gw,
                                  double* gb, int O, int I, int B) {
  for (int o = 0; o < O; ++o) {
    const double* go = gy + (long)o * B;
    for (int i = 0; i < I; ++i) {
      const double* xi = x + (long)i * B;
      Acc4 acc;
      for (int b = 0; b < B; ++b) acc.add(b & 3, go[b], xi[b]);
      gw[(long)o * I + i] = acc.total();
    }
    Acc4 acc;
    for (int b = 0; b < B; ++b) acc.add(b & 3, go[b], 1.0);
    gb[o] = acc.total();
  }
}

inline void conv2d_forward_ref(const double* w, const double* bias, const double* x,
                               double* y, const ConvShape& s, int B) {
  const int HO = s.hout(), WO = s.wout();
  for (int co = 0; co < s.cout; ++co) {
    for (int oh = 0; oh < HO; ++oh) {
      for (int ow = 0; ow < WO; ++ow) {
        double* yo = y + (((long)co * HO + oh) * WO + ow) * B;
        for (int b = 0; b < B; ++b) yo[b] = bias[co];
        for (int ci = 0; ci < s.cin; ++ci) {
          for (int kh = 0; kh < s.k; ++kh) {
            const int ih = oh * s.stride - s.pad + kh;
            if (ih < 0 || ih >= s.hin) continue;
            for (int kw = 0; kw < s.k; ++kw) {
              const int iw = ow * s.stride - s.pad + kw;
              if (iw < 0 || iw >= s.win) continue;
              const double wv = w[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw];
              const double* xi = x + (((long)ci * s.hin + ih) * s.win + iw) * B;
              for (int b = 0; b < B; ++b) yo[b] = std::fma(wv, xi[b], yo[b]);
            }
          }
        }
      }
    }
  }
}

inline void conv2d_backward_input_ref(const double* w, const double* gy, double* gx,
                                      const ConvShape& s, int B) {
  const int HO = s.hout(), WO = s.wout();
  const long n = (long)s.cin * s.hin * s.win * B;
  for (long i = 0; i < n; ++i) gx[i] = 0.0;
  for (int co = 0; co < s.cout; ++co) {
    for (int oh = 0; oh < HO; ++oh) {
      for (int ow = 0; ow < WO; ++ow) {
        const double* go = gy + (((long)co * HO + oh) * WO + ow) * B;
        for (int ci = 0; ci < s.cin; ++ci) {
          for (int kh = 0; kh < s.k; ++kh) {
            const int ih = oh * s.stride - s.pad + kh;
            if (ih < 0 || ih >= s.hin) continue;
            for (int kw = 0; kw < s.k; ++kw) {
              const int iw = ow * s.stride - s.pad + kw;
              if (iw < 0 || iw >= s.win) continue;
              const double wv = w[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw];
              double* gi = gx + (((long)ci * s.hin + ih) * s.win + iw) * B;
              for (int b = 0; b < B; ++b) gi[b] = std::fma(wv, go[b], gi[b]);
            }
          }
        }
      }
    }
  }
}

inline void conv2d_grad_params_ref(const double* x, const double* gy, double* gw,
                                   double* gb, const ConvShape& s, int B) {
  const int HO = s.hout(), WO = s.wout();
  for (int co = 0; co < s.cout; ++co) {
    for (int ci = 0; ci < s.cin; ++ci) {
      for (int kh = 0; kh < s.k; ++kh) {
        for (int kw = 0; kw < s.k; ++kw) {
          Acc4 acc;
          for (int oh = 0; oh < HO; ++oh) {
            const int ih = oh * s.stride - s.pad + kh;
            if (ih < 0 || ih >= s.hin) continue;
            for (int ow = 0; ow < WO; ++ow) {
              const int iw = ow * s.stride - s.pad + kw;
              if (iw < 0 || iw >= s.win) continue;
              const double* go = gy + (((long)co * HO + oh) * WO + ow) * B;
              const double* xi = x + (((long)ci * s.hin + ih) * s.win + iw) * B;
              for (int b = 0; b < B; ++b) acc.add(b & 3, go[b], xi[b]);
            }
          }
          gw[(((long)co * s.cin + ci) * s.k + kh) * s.k + kw] = acc.total();
        }
      }
    }
    Acc4 acc;
    const double* gc = gy + (long)co * HO * WO * B;
    for (long j = 0; j < (long)HO * WO; ++j)
      for (int b = 0; b < B; ++b) acc.add(b & 3, gc[j * B + b], 1.0);
    gb[co] = acc.total();
  }
}

inline void relu_forward_ref(const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

inline void relu_backward_ref(const double* x, const double* gy, double* gx, int n) {
  for (int i = 0; i < n; ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
}

inline void add_ref(const double* a, const double* b, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

inline void adam_step_ref(double* p, const double* g, double* m, double* v, int n,
                          double lr, double beta1, double beta2, double eps,
                          double bc1, double bc2) {
  for (int i = 0; i < n; ++i) {
    m[i] = std::fma(beta1, m[i], (1.0 - beta1) * g[i]);
    v[i] = std::fma(beta2, v[i], (1.0 - beta2) * (g[i] * g[i]));
    p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
  }
}

inline void soft_update_ref(double* target, const double* online, double rho, int n) {
  for (int i = 0; i < n; ++i) target[i] = std::fma(rho, target[i], (1.0 - rho) * online[i]);
}

}  // namespace drivesac::kernels::detail
