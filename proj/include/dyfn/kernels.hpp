#pragma once

// Data-parallel kernels behind the tensor and autodiff layers.
//
// Every kernel has an OpenMP version (dyfn::kernels) and a serial reference
// (dyfn::kernels::serial). Both accumulate each output element in the same
// order, so their results are bit-identical; the serial versions exist for
// tests and for the benchmark comparison.

#include "dyfn/tensor.hpp"

namespace dyfn::kernels {

/// Caps the OpenMP thread count. Reads DYFN_THREADS when `threads` is 0.
void configure_threads(int threads = 0);
int max_threads();

/// Same-padded 2D cross-correlation. in: Ci x H x W, w: Co x Ci x k x k.
Tensor conv2d(const Tensor& in, const Tensor& w);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& w);
Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& in, std::size_t k);

/// Per-channel mean and population stddev of a C x ... tensor.
void channel_stats(const Tensor& f, Tensor& mean, Tensor& stddev);

namespace serial {
Tensor conv2d(const Tensor& in, const Tensor& w);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& w);
Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& in, std::size_t k);
void channel_stats(const Tensor& f, Tensor& mean, Tensor& stddev);
}  // namespace serial

}  // namespace dyfn::kernels
