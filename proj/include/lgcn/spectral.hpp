#pragma once

#include "lgcn/tensor.hpp"

/// Per-channel 2-D discrete Fourier transforms over H x W x C maps.
///
/// Direct O(N^2) summation along each axis; grids here are at most 16x16.
/// Forward transform is unnormalized, the inverse carries the 1/(H*W).
namespace lgcn::spectral {

ComplexGrid dft2d(const Tensor& input);

/// Real part of the inverse transform.
Tensor idft2d(const ComplexGrid& input);

/// Full complex inverse transform, used to inspect imaginary residue.
ComplexGrid idft2d_complex(const ComplexGrid& input);

/// Adjoint of dft2d: maps dL/d(Re X), dL/d(Im X) to dL/dx.
Tensor dft2d_backward(const ComplexGrid& grad);

/// Adjoint of idft2d (real part): maps dL/dy to dL/d(Re Y), dL/d(Im Y).
ComplexGrid idft2d_backward(const Tensor& grad);

}  // namespace lgcn::spectral
