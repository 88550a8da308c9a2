#include "kernels_detail.hpp"

// Portable reference lane. Compiled for the baseline ISA; std::fma resolves to
// libm's correctly rounded fma, so results match the hardware-FMA lanes.

namespace drivesac::kernels {

namespace {
using namespace detail;

const Ops kScalarOps = {
    "scalar",
    &dense_forward_ref,
    &dense_backward_input_ref,
    &dense_grad_params_ref,
    &conv2d_forward_ref,
    &conv2d_backward_input_ref,
    &conv2d_grad_params_ref,
    &relu_forward_ref,
    &relu_backward_ref,
    &add_ref,
    &adam_step_ref,
    &soft_update_ref,
};
}  // namespace

const Ops* scalar_ops() { return &kScalarOps; }

}  // namespace drivesac::kernels
