#pragma once

// Internal cross-TU declarations for individual lane kernels, so wider lanes
// can reuse narrower ones where the semantics already pin the algorithm
// (batch reductions must accumulate on exactly four lanes regardless of
// vector width).

#include "drivesac/kernels.hpp"

namespace drivesac::kernels {

void avx2_dense_forward(const double* w, const double* bias, const double* x,
                        double* y, int O, int I, int B);
void avx2_dense_backward_input(const double* w, const double* gy, double* gx,
                               int O, int I, int B);
void avx2_dense_grad_params(const double* x, const double* gy, double* gw,
                            double* gb, int O, int I, int B);
void avx2_conv2d_forward(const double* w, const double* bias, const double* x,
                         double* y, const ConvShape& s, int B);
void avx2_conv2d_backward_input(const double* w, const double* gy, double* gx,
                                const ConvShape& s, int B);
void avx2_conv2d_grad_params(const double* x, const double* gy, double* gw,
                             double* gb, const ConvShape& s, int B);
void avx2_relu_forward(const double* x, double* y, int n);
void avx2_relu_backward(const double* x, const double* gy, double* gx, int n);
void avx2_add(const double* a, const double* b, double* y, int n);
void avx2_adam_step(double* p, const double* g, double* m, double* v, int n,
                    double lr, double beta1, double beta2, double eps,
                    double bc1, double bc2);
void avx2_soft_update(double* target, const double* online, double rho, int n);

}  // namespace drivesac::kernels
