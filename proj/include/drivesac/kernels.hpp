#pragma once

#include <string_view>
#include <vector>

// Data-parallel inner loops for the network core. Every activation tensor keeps
// the batch as the innermost (fastest-varying) dimension, so a feature map with
// C channels and HxW pixels for a batch of B samples occupies C*H*W*B doubles,
// indexed [((c*H + h)*W + w)*B + b]. Under this layout the forward and
// backward-input kernels are elementwise across b: a wider vector lane only
// changes how many batch elements move together, never the order in which a
// single element's terms are accumulated.
//
// Reductions over the batch (the *_grad_params kernels) fix their summation
// tree explicitly: terms go to four interleaved partial sums keyed by b % 4,
// combined at the end as (s0 + s2) + (s1 + s3). Multiply-adds are written as
// fused ops (std::fma / _mm*_fmadd). Every lane in this file's dispatch table
// must reproduce these semantics bitwise; tests/test_kernels.cpp enforces it.

namespace drivesac::kernels {

struct ConvShape {
  int cin = 0, hin = 0, win = 0;
  int cout = 0, k = 0, stride = 1, pad = 0;
  int hout() const { return (hin + 2 * pad - k) / stride + 1; }
  int wout() const { return (win + 2 * pad - k) / stride + 1; }
};

struct Ops {
  const char* name;

  // y[o*B+b] = bias[o] + sum_i w[o*I+i] * x[i*B+b]
  void (*dense_forward)(const double* w, const double* bias, const double* x,
                        double* y, int O, int I, int B);
  // gx[i*B+b] = sum_o w[o*I+i] * gy[o*B+b]
  void (*dense_backward_input)(const double* w, const double* gy, double* gx,
                               int O, int I, int B);
  // gw[o*I+i] = sum_b gy[o*B+b] * x[i*B+b];  gb[o] = sum_b gy[o*B+b]
  void (*dense_grad_params)(const double* x, const double* gy, double* gw,
                            double* gb, int O, int I, int B);

  // Taps that fall into the zero padding are skipped; the remaining terms are
  // accumulated in (ci, kh, kw) order for every output position.
  void (*conv2d_forward)(const double* w, const double* bias, const double* x,
                         double* y, const ConvShape& s, int B);
  // gx is zeroed, then accumulated in (co, oh, ow, ci, kh, kw) order.
  void (*conv2d_backward_input)(const double* w, const double* gy, double* gx,
                                const ConvShape& s, int B);
  // Reduction over valid (oh, ow) in row-major order with the b%4 lane rule.
  void (*conv2d_grad_params)(const double* x, const double* gy, double* gw,
                             double* gb, const ConvShape& s, int B);

  void (*relu_forward)(const double* x, double* y, int n);   // y = max(x, 0)
  void (*relu_backward)(const double* x, const double* gy, double* gx, int n);
  void (*add)(const double* a, const double* b, double* y, int n);

  // m = fma(b1, m, (1-b1)*g); v = fma(b2, v, (1-b2)*g*g);
  // p -= lr * (m*bc1) / (sqrt(v*bc2) + eps)   with bc = 1/(1-beta^t) passed in.
  void (*adam_step)(double* p, const double* g, double* m, double* v, int n,
                    double lr, double beta1, double beta2, double eps,
                    double bc1, double bc2);
  // t = fma(rho, t, (1-rho)*o)
  void (*soft_update)(double* target, const double* online, double rho, int n);
};

// Highest supported lane, or the one named in DRIVESAC_KERNELS if set.
const Ops& active();
void set_active(const Ops* ops);  // nullptr reverts to auto-detection

const Ops* find(std::string_view name);   // "scalar" | "avx2" | "avx512"
std::vector<const Ops*> available();      // lanes usable on this machine

}  // namespace drivesac::kernels
